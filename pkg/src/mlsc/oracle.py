"""Known-support (oracle) estimators and their error bounds.

Every estimator here is linear in the measurements, ``g_i_hat = U_i y``,
so the expected squared error under white noise of level ``sigma`` is
``sigma^2 trace(U_i U_i^T)``.  The bound evaluators are plain arithmetic
on RIP and Subset-RIP constants (see :mod:`mlsc.metrics`).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import rip_constant, subset_rip_constant
from .model import RANK_RTOL, MultiLayerModel, build_phi, effective_dictionary, numerical_rank


class RankDeficientError(ValueError):
    """A sub-dictionary the oracle must invert is not of full column rank."""


def full_rank_pinv(A, what: str = "sub-dictionary", rtol: float = RANK_RTOL) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    U, sv, Vt = np.linalg.svd(A, full_matrices=False)
    if numerical_rank(sv, rtol) < A.shape[1]:
        raise RankDeficientError(f"{what} of shape {A.shape} is rank deficient")
    return (Vt.T / sv) @ U.T


def _embed_rows(M, rows, size):
    out = np.zeros((size, M.shape[1]))
    out[rows] = M
    return out


@dataclass
class OracleEstimate:
    """Linear oracle ``g_i_hat = estimators[i] @ y`` for each layer.

    ``expected`` holds ``sigma^2 trace(U U^T)`` per layer and ``bounds`` the
    matching ``(lower, upper)`` interval, or ``None`` where no constants
    were supplied.
    """

    estimators: tuple
    gammas: tuple
    expected: tuple | None = None
    bounds: tuple | None = None

    def noise_factor(self, i: int) -> np.ndarray:
        """Symmetric square root ``(U_i U_i^T)^(1/2)`` (1-based layer)."""
        U = self.estimators[i - 1]
        w, V = np.linalg.eigh(U @ U.T)
        return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


def _package(estimators, y, sigma, bounds=None) -> OracleEstimate:
    y = np.asarray(y, dtype=float)
    gammas = tuple(U @ y for U in estimators)
    expected = None
    if sigma is not None:
        expected = tuple(float(sigma**2 * np.sum(U * U)) for U in estimators)
    return OracleEstimate(tuple(estimators), gammas, expected, bounds)


def _supports(supports, model: MultiLayerModel | None = None):
    sup = getattr(supports, "supports", supports)
    sup = tuple(np.sort(np.asarray(s, dtype=int).ravel()) for s in sup)
    if model is not None and len(sup) != model.depth:
        raise ValueError(f"need {model.depth} supports, got {len(sup)}")
    return sup


# -- estimators --------------------------------------------------------------


def oracle_single_layer(D, y, support, sigma=None, delta=None) -> OracleEstimate:
    """Least squares on the known support; ``delta`` is the RIP constant of order ``|support|``."""
    D = np.asarray(D, dtype=float)
    sup = np.sort(np.asarray(support, dtype=int).ravel())
    U = _embed_rows(full_rank_pinv(D[:, sup]), sup, D.shape[1])
    bounds = None
    if sigma is not None and delta is not None:
        bounds = (single_layer_bound(sigma, sup.size, delta),)
    return _package([U], y, sigma, bounds)


def oracle_layered(model: MultiLayerModel, y, supports, sigma=None, constants=None) -> OracleEstimate:
    """Cascade of least-squares fits with the full-column sub-dictionaries ``D_i[:, S_i]``."""
    sup = _supports(supports, model)
    ests = []
    prev = np.eye(model.signal_dim)
    for i, (D, s) in enumerate(zip(model.layers, sup), start=1):
        P = full_rank_pinv(D[:, s], f"D_{i} restricted to its support")
        prev = _embed_rows(P @ prev, s, D.shape[1])
        ests.append(prev)
    bounds = None
    if sigma is not None and constants is not None:
        sizes = [len(s) for s in sup]
        bounds = tuple(layered_bound(sigma, sizes, model.dims[:-1], constants, i) for i in range(1, model.depth + 1))
    return _package(ests, y, sigma, bounds)


def _row_restricted_chain(model, sup, deep_est):
    # g_i = D_{i+1}[S_i, S_{i+1}] g_{i+1}, zero outside S_i
    k = model.depth
    ests = [None] * k
    ests[-1] = deep_est
    for i in range(k - 1, 0, -1):
        D = model.layers[i]
        block = D[np.ix_(sup[i - 1], sup[i])] @ ests[i][sup[i]]
        ests[i - 1] = _embed_rows(block, sup[i - 1], D.shape[0])
    return ests


def oracle_projection(model: MultiLayerModel, y, supports, sigma=None, constants=None) -> OracleEstimate:
    """Least squares on ``D_(k)[:, S_k]``, then back-tracking through row/column restricted layers."""
    sup = _supports(supports, model)
    k = model.depth
    Dk = effective_dictionary(model, k)
    deep = _embed_rows(full_rank_pinv(Dk[:, sup[-1]], "effective dictionary on its support"), sup[-1], Dk.shape[1])
    ests = _row_restricted_chain(model, sup, deep)
    bounds = None
    if sigma is not None and constants is not None:
        sizes = [len(s) for s in sup]
        bounds = tuple(projection_bound(sigma, sizes, model.dims[1:], constants, i) for i in range(1, k + 1))
    return _package(ests, y, sigma, bounds)


def oracle_holistic(
    model: MultiLayerModel, y, supports, cosupports=None, sigma=None, constants=None
) -> OracleEstimate:
    """Least squares restricted to the kernel of the analysis constraints.

    ``cosupports`` defaults to the complements of the mid-layer supports.
    """
    sup = _supports(supports, model)
    k = model.depth
    if cosupports is None:
        cosupports = []
        for s, m in zip(sup[:-1], model.dims[1:-1]):
            mask = np.ones(m, dtype=bool)
            mask[s] = False
            cosupports.append(np.flatnonzero(mask))
    con = build_phi(model, cosupports, sup[-1])
    Dk = effective_dictionary(model, k)
    K = con.kernel
    if K.shape[1] == 0:
        raise RankDeficientError("analysis constraints leave no free dimension")
    core = K @ full_rank_pinv(Dk[:, sup[-1]] @ K, "effective dictionary times kernel basis")
    deep = _embed_rows(core, sup[-1], Dk.shape[1])
    ests = _row_restricted_chain(model, sup, deep)
    bounds = None
    if sigma is not None and constants is not None:
        sizes = [len(s) for s in sup]
        bounds = tuple(
            holistic_bound(sigma, sizes, model.dims[1:], constants, con.rank, i) for i in range(1, k + 1)
        )
    return _package(ests, y, sigma, bounds)


def row_restricted_product(model: MultiLayerModel, supports) -> np.ndarray:
    """``D_1[:, S_1] D_2[S_1, S_2] ... D_k[S_{k-1}, S_k]``."""
    sup = _supports(supports, model)
    P = model.layers[0][:, sup[0]]
    for D, a, b in zip(model.layers[1:], sup[:-1], sup[1:]):
        P = P @ D[np.ix_(a, b)]
    return P


def row_restricted_estimator(model: MultiLayerModel, supports) -> np.ndarray:
    """Deepest-layer estimator built from the row-restricted product (full length ``m_k``)."""
    sup = _supports(supports, model)
    P = full_rank_pinv(row_restricted_product(model, sup), "row-restricted product")
    return _embed_rows(P, sup[-1], model.dims[-1])


def oracle_bias_row_restricted(model: MultiLayerModel, supports, gamma) -> np.ndarray:
    """Mean error of the row-restricted estimator when ``y = D_(k) gamma + noise``.

    ``gamma`` is the full-length deepest representation; the result is
    indexed by the deepest support.
    """
    sup = _supports(supports, model)
    g = np.asarray(gamma, dtype=float)[sup[-1]]
    P = row_restricted_product(model, sup)
    Dk = effective_dictionary(model, model.depth)[:, sup[-1]]
    return full_rank_pinv(P, "row-restricted product") @ ((Dk - P) @ g)


def monte_carlo_errors(estimator, x, truth, sigma: float, n_draws: int, rng=None, chunk: int = 2000) -> np.ndarray:
    """Per-draw errors ``U (x + e) - truth`` for ``n_draws`` Gaussian noise draws (rows)."""
    U = np.asarray(estimator, dtype=float)
    x = np.asarray(x, dtype=float)
    base = U @ x - np.asarray(truth, dtype=float)
    rng = np.random.default_rng(rng)
    out = np.empty((n_draws, U.shape[0]))
    for start in range(0, n_draws, chunk):
        stop = min(n_draws, start + chunk)
        e = sigma * rng.standard_normal((stop - start, x.size))
        out[start:stop] = base + e @ U.T
    return out


# -- bounds ------------------------------------------------------------------


@dataclass(frozen=True)
class OracleConstants:
    """RIP constants entering the bounds.

    ``delta[j-1]`` is the RIP constant of ``D_j`` at order ``s_j``;
    ``subset[j-2]`` the Subset-RIP constant of ``D_j`` at orders
    ``(s_{j-1}, s_j)`` for ``j >= 2``; ``delta_eff`` the RIP constant of
    ``D_(k)`` at order ``s_k``.  ``sampled`` marks lower estimates.
    """

    delta: tuple
    subset: tuple
    delta_eff: float
    sampled: bool = False


def oracle_constants(model: MultiLayerModel, sparsities, mode: str = "exhaustive", n_samples: int = 2000, rng=None):
    s = [int(v) for v in sparsities]
    if len(s) != model.depth:
        raise ValueError(f"need {model.depth} sparsities")
    delta = tuple(rip_constant(D, sj, mode, n_samples, rng) for D, sj in zip(model.layers, s))
    subset = tuple(
        subset_rip_constant(D, s[j - 1], s[j], mode, n_samples, rng) for j, D in enumerate(model.layers[1:], start=1)
    )
    eff = rip_constant(effective_dictionary(model, model.depth), s[-1], mode, n_samples, rng)
    return OracleConstants(delta, subset, eff, mode == "sampled")


def _check(delta):
    if delta >= 1:
        raise ValueError(f"RIP constant {delta} >= 1: bound denominator is not positive")


def single_layer_bound(sigma: float, s: int, delta: float) -> tuple:
    _check(delta)
    v = sigma**2 * s
    return (v / (1 + delta), v / (1 - delta))


def layered_bound(sigma: float, sparsities, rows, constants: OracleConstants, i: int) -> tuple:
    """Interval for layer ``i`` of the layered oracle.

    ``rows[j-1]`` is the row count of ``D_j`` (``n`` for the first layer).
    """
    s = sparsities
    d = constants.delta
    _check(d[0])
    lo = sigma**2 * s[i - 1] / (1 + d[0])
    hi = sigma**2 * s[i - 1] / (1 - d[0])
    for j in range(2, i + 1):
        _check(d[j - 1])
        ratio = s[j - 2] / rows[j - 1]
        sub = constants.subset[j - 2]
        lo *= (ratio - sub) / (1 + d[j - 1]) ** 2
        hi *= (ratio + sub) / (1 - d[j - 1]) ** 2
    return (lo, hi)


def _c_products(sparsities, widths, constants, i):
    lo = hi = 1.0
    k = len(sparsities)
    for j in range(i + 1, k + 1):
        ratio = sparsities[j - 2] / widths[j - 2]
        sub = constants.subset[j - 2]
        lo *= ratio - sub
        hi *= ratio + sub
    return lo, hi


def projection_bound(sigma: float, sparsities, widths, constants: OracleConstants, i: int) -> tuple:
    """Interval for layer ``i`` of the projection oracle; ``widths[j-1] = m_j``."""
    _check(constants.delta_eff)
    c1, c2 = _c_products(sparsities, widths, constants, i)
    v = sigma**2 * sparsities[-1]
    return (v * c1 / (1 + constants.delta_eff), v * c2 / (1 - constants.delta_eff))


def holistic_bound(sigma: float, sparsities, widths, constants: OracleConstants, rank: int, i: int) -> tuple:
    """As :func:`projection_bound` with ``s_k`` replaced by ``s_k - rank``."""
    _check(constants.delta_eff)
    c1, c2 = _c_products(sparsities, widths, constants, i)
    v = sigma**2 * (sparsities[-1] - rank)
    return (v * c1 / (1 + constants.delta_eff), v * c2 / (1 - constants.delta_eff))


def bound_evaluators(model: MultiLayerModel, supports, sigma: float, constants: OracleConstants, rank: int = 0) -> dict:
    """All intervals per layer (1-based keys) for the given supports."""
    sup = _supports(supports, model)
    s = [len(v) for v in sup]
    k = model.depth
    return {
        "single_layer": single_layer_bound(sigma, s[-1], constants.delta_eff),
        "layered": {i: layered_bound(sigma, s, model.dims[:-1], constants, i) for i in range(1, k + 1)},
        "projection": {i: projection_bound(sigma, s, model.dims[1:], constants, i) for i in range(1, k + 1)},
        "holistic": {i: holistic_bound(sigma, s, model.dims[1:], constants, rank, i) for i in range(1, k + 1)},
    }
