import numpy as np
import pytest

from mlsc.model import MultiLayerModel
from mlsc.sampler import SamplerConfig, sample_model, sample_signal, trial_rng


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_instance(seed=0, dims=(12, 20, 10), s=5, ell=(3,)):
    cfg = SamplerConfig(dims, s, ell)
    r = trial_rng(seed, 0)
    model = sample_model(cfg, r)
    stack, con = sample_signal(model, cfg, r)
    return model, stack, con, cfg


def orthonormal(n, rng):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return q


def three_layer(rng):
    return MultiLayerModel((rng.standard_normal((6, 8)), rng.standard_normal((8, 7)), rng.standard_normal((7, 5))))


ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
