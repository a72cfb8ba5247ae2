"""Random dictionaries, model signals and calibrated noise.

Signals are drawn with the synthesis-analysis recipe: pick the deepest
support and the mid-layer co-supports, span the kernel of the induced
analysis matrix and draw coefficients in that basis.  Every random draw
comes from a ``numpy.random.Generator``; :func:`trial_rng` derives
independent per-trial streams from a master seed so that parallel runs
reproduce serial ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    AnalysisConstraint,
    MultiLayerModel,
    RepresentationStack,
    build_phi,
)

#: Relative size under which an entry of a propagated representation is zero.
ZERO_RTOL = 1e-9


class DegenerateModelError(RuntimeError):
    """No admissible signal was found within the resampling budget."""


def trial_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``; order of creation is irrelevant."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key)))


def sample_dictionary(rows: int, cols: int, variance: float, rng=None) -> np.ndarray:
    """I.i.d. ``N(0, variance)`` matrix."""
    if variance <= 0:
        raise ValueError("variance must be positive")
    rng = np.random.default_rng(rng)
    return rng.normal(0.0, np.sqrt(variance), size=(rows, cols))


@dataclass(frozen=True)
class SamplerConfig:
    """Dimensions and sparsity levels of the sampled model.

    ``dims`` is ``(n, m_1, ..., m_k)``; ``cosparsities`` holds ``l_1 ..
    l_{k-1}``; ``gamma_min`` is a scalar or one value per mid-layer.
    ``variances`` defaults to ``1/n`` for ``D_1`` and ``1/m_i`` for ``D_i``.
    """

    dims: tuple
    deep_sparsity: int
    cosparsities: tuple = ()
    gamma_min: object = 0.0
    variances: tuple | None = None
    max_resample: int = 1000
    alpha_tries: int = 20

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "cosparsities", tuple(int(c) for c in self.cosparsities))
        k = len(dims) - 1
        if k < 1:
            raise ValueError("dims must list n and at least one layer width")
        if len(self.cosparsities) != k - 1:
            raise ValueError(f"need {k - 1} mid-layer co-sparsities")
        if not 1 <= self.deep_sparsity <= dims[-1]:
            raise ValueError("deep sparsity outside 1..m_k")
        for c, m in zip(self.cosparsities, dims[1:-1]):
            if not 0 <= c < m:
                raise ValueError("co-sparsity must lie in [0, m_i)")
        if np.any(np.asarray(self.gamma_mins) < 0):
            raise ValueError("gamma_min must be nonnegative")

    @property
    def depth(self) -> int:
        return len(self.dims) - 1

    @property
    def gamma_mins(self) -> tuple:
        g = np.broadcast_to(np.asarray(self.gamma_min, dtype=float), (self.depth - 1,))
        return tuple(float(v) for v in g)

    def layer_variances(self) -> tuple:
        if self.variances is not None:
            return tuple(self.variances)
        n = self.dims[0]
        return (1.0 / n,) + tuple(1.0 / m for m in self.dims[2:])


def sample_model(config: SamplerConfig, rng=None) -> MultiLayerModel:
    """Dense Gaussian dictionaries with the configured per-layer variances."""
    rng = np.random.default_rng(rng)
    dims = config.dims
    layers = [
        sample_dictionary(dims[i], dims[i + 1], var, rng)
        for i, var in enumerate(config.layer_variances())
    ]
    return MultiLayerModel(tuple(layers))


def _propagate(model: MultiLayerModel, gk: np.ndarray, cosupports) -> list:
    # chain from the deepest layer; co-support entries are snapped to exact zeros
    k = model.depth
    gammas = [None] * k
    gammas[-1] = gk
    for i in range(k - 1, 0, -1):
        g = model.layers[i] @ gammas[i]
        g[cosupports[i - 1]] = 0.0
        gammas[i - 1] = g
    return gammas


def _admissible(gammas, con: AnalysisConstraint, gamma_mins) -> bool:
    gk = gammas[-1]
    nrm = np.linalg.norm(gk)
    if nrm == 0 or np.any(np.abs(gk[con.deep_support]) <= ZERO_RTOL * nrm):
        return False
    if con.phi_restricted.size and np.max(np.abs(con.phi_restricted @ gk[con.deep_support])) > 1e-9 * nrm:
        return False
    for g, cs, gmin in zip(gammas[:-1], con.cosupports, gamma_mins):
        mask = np.ones(g.size, dtype=bool)
        mask[cs] = False
        on = np.abs(g[mask])
        if on.size and (np.any(on <= ZERO_RTOL * np.linalg.norm(g)) or np.any(on < gmin)):
            return False
    return True


def draw_pattern(config: SamplerConfig, rng) -> tuple:
    """Uniform random deepest support and mid-layer co-supports (sorted, 0-based)."""
    dims = config.dims
    cos = tuple(np.sort(rng.choice(m, c, replace=False)) for m, c in zip(dims[1:-1], config.cosparsities))
    deep = np.sort(rng.choice(dims[-1], config.deep_sparsity, replace=False))
    return cos, deep


def sample_signal(model: MultiLayerModel, config: SamplerConfig, rng=None):
    """Draw an admissible stack; returns ``(stack, constraint)``.

    The coefficient vector is resampled first; after ``alpha_tries``
    failures a fresh support pattern is drawn.  Raises
    :class:`DegenerateModelError` once ``max_resample`` draws are used up.
    """
    if tuple(model.dims) != tuple(config.dims):
        raise ValueError(f"model dims {model.dims} differ from config dims {config.dims}")
    rng = np.random.default_rng(rng)
    gmins = config.gamma_mins
    attempts = 0
    while attempts < config.max_resample:
        cos, deep = draw_pattern(config, rng)
        con = build_phi(model, cos, deep)
        if con.dof == 0:
            attempts += 1
            continue
        for _ in range(config.alpha_tries):
            attempts += 1
            alpha = rng.standard_normal(con.dof)
            gk = con.embed(alpha)
            gammas = _propagate(model, gk, cos)
            if _admissible(gammas, con, gmins):
                x = model.layers[0] @ gammas[0]
                return RepresentationStack(x, tuple(gammas)), con
            if attempts >= config.max_resample:
                break
    raise DegenerateModelError(
        f"no admissible signal after {config.max_resample} draws "
        f"(s_k={config.deep_sparsity}, cosparsities={config.cosparsities})"
    )


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian noise given either by its standard deviation or by an SNR in dB.

    The SNR convention is ``10 log10(||x||^2 / (n sigma^2))``.
    """

    sigma: float | None = None
    snr_db: float | None = None

    def __post_init__(self):
        if (self.sigma is None) == (self.snr_db is None):
            raise ValueError("give exactly one of sigma and snr_db")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    def sigma_for(self, x) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        x = np.asarray(x, dtype=float)
        energy = float(x @ x)
        if energy == 0:
            raise ValueError("SNR is undefined for a zero signal")
        return float(np.sqrt(energy / (x.size * 10.0 ** (self.snr_db / 10.0))))


def add_noise(x, spec: NoiseSpec, rng=None):
    """Return ``(y, sigma, realized_snr_db)`` with ``y = x + e``."""
    x = np.asarray(x, dtype=float)
    sigma = spec.sigma_for(x)
    rng = np.random.default_rng(rng)
    e = sigma * rng.standard_normal(x.size)
    err = float(e @ e)
    snr = float("inf") if err == 0 else 10.0 * np.log10(float(x @ x) / err)
    return x + e, sigma, snr
