"""Multi-layer sparse coding: model, diagnostics, sampling, pursuits and oracles."""
from .model import (
    MultiLayerModel,
    RepresentationStack,
    SupportPattern,
    build_phi,
    effective_dictionary,
    kernel_basis,
    validate_stack,
)
from .metrics import metrics_report, mutual_coherence, rip_constant, spark
from .oracle import oracle_holistic, oracle_layered, oracle_projection, oracle_single_layer
from .pursuit import (
    SolverParams,
    choose_layer,
    constrained_lasso_admm,
    hard_threshold,
    holistic_pursuit,
    lasso,
    layered_pursuit,
    projection_pursuit,
)
from .sampler import NoiseSpec, SamplerConfig, add_noise, sample_model, sample_signal

__version__ = "0.1.0"
