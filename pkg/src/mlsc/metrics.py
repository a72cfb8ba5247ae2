"""Dictionary diagnostics and the recovery conditions built on them.

Coherence, spark and (subset) restricted isometry constants, plus the
uniqueness, stability and holistic-pursuit success conditions that are
phrased in terms of those quantities.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import (
    RANK_RTOL,
    MultiLayerModel,
    RepresentationStack,
    build_phi,
    effective_dictionary,
    propagation_matrices,
)

#: Default largest column count for exhaustive spark computation.
SPARK_MAX_COLS = 20
#: Largest number of subsets enumerated in exhaustive RIP modes.
MAX_ENUMERATION = 10**6
#: Number of random subsets in sampled RIP modes.
DEFAULT_SAMPLES = 2000
#: Entries with ``|g_j| <= ZERO_RTOL * ||g||_2`` count as zeros of a representation.
ZERO_RTOL = 1e-9


class EnumerationLimitError(ValueError):
    """An exhaustive search would exceed its configured size."""


def _unit_columns(D: np.ndarray, what: str = "column") -> np.ndarray:
    norms = np.linalg.norm(D, axis=0)
    if np.any(norms == 0):
        raise ValueError(f"zero {what}: normalisation undefined")
    return D / norms


def mutual_coherence(D) -> float:
    """Largest absolute normalised inner product between two distinct columns."""
    D = np.asarray(D, dtype=float)
    if D.shape[1] < 2:
        raise ValueError("mutual coherence needs at least two columns")
    U = _unit_columns(D)
    G = np.abs(U.T @ U)
    np.fill_diagonal(G, 0.0)
    return float(min(G.max(), 1.0))


def row_mutual_coherence(D, normalize: bool = True) -> float:
    """Largest ``|d_p d_j^T|`` over distinct rows.

    Rows are scaled to unit norm first unless ``normalize`` is false, in
    which case raw inner products are returned.
    """
    D = np.asarray(D, dtype=float)
    if D.shape[0] < 2:
        raise ValueError("row mutual coherence needs at least two rows")
    R = _unit_columns(D.T, "row") if normalize else D.T
    G = np.abs(R.T @ R)
    np.fill_diagonal(G, 0.0)
    return float(G.max())


def _min_sv_ratio(batch: np.ndarray) -> np.ndarray:
    sv = np.linalg.svd(batch, compute_uv=False)
    top = sv[:, 0]
    return np.where(top > 0, sv[:, -1] / np.where(top > 0, top, 1.0), 0.0)


def spark(D, max_cols: int = SPARK_MAX_COLS, rtol: float = RANK_RTOL, chunk: int = 20000) -> int:
    """Smallest number of linearly dependent columns.

    Full column rank matrices return the sentinel ``min(n, m) + 1``.
    Raises :class:`EnumerationLimitError` when ``m > max_cols``; callers can
    fall back on ``1 + 1 / mutual_coherence(D)``.
    """
    D = np.asarray(D, dtype=float)
    n, m = D.shape
    if m > max_cols:
        raise EnumerationLimitError(f"spark: {m} columns exceed the cap of {max_cols}")
    if np.any(np.linalg.norm(D, axis=0) == 0):
        return 1
    for size in range(2, min(n + 1, m) + 1):
        if size > n:
            return size
        combos = itertools.combinations(range(m), size)
        while True:
            block = np.array(list(itertools.islice(combos, chunk)), dtype=int)
            if block.size == 0:
                break
            ratios = _min_sv_ratio(D[:, block].transpose(1, 0, 2))
            if np.any(ratios <= rtol):
                return size
    return min(n, m) + 1


def _subsets(m: int, s: int, mode: str, n_samples: int, rng) -> np.ndarray:
    if mode == "exhaustive":
        total = math.comb(m, s)
        if total > MAX_ENUMERATION:
            raise EnumerationLimitError(f"C({m},{s}) = {total} subsets exceed {MAX_ENUMERATION}")
        return np.array(list(itertools.combinations(range(m), s)), dtype=int).reshape(-1, s)
    if mode == "sampled":
        rng = np.random.default_rng(rng)
        return np.array([np.sort(rng.choice(m, s, replace=False)) for _ in range(n_samples)], dtype=int)
    raise ValueError(f"unknown mode {mode!r}")


def _gram_extremes(sub: np.ndarray):
    G = np.einsum("bij,bik->bjk", sub, sub)
    ev = np.linalg.eigvalsh(G)
    return ev[:, 0], ev[:, -1]


def rip_constant(D, s: int, mode: str = "exhaustive", n_samples: int = DEFAULT_SAMPLES, rng=None) -> float:
    """RIP constant of order ``s``: worst deviation of sub-Gram eigenvalues from 1.

    ``mode="sampled"`` only visits ``n_samples`` random supports and so
    returns a lower bound on the true constant.
    """
    D = np.asarray(D, dtype=float)
    m = D.shape[1]
    if not 1 <= s <= m:
        raise ValueError(f"s={s} outside 1..{m}")
    cols = _subsets(m, s, mode, n_samples, rng)
    worst = 0.0
    for start in range(0, len(cols), 20000):
        lo, hi = _gram_extremes(D[:, cols[start:start + 20000]].transpose(1, 0, 2))
        worst = max(worst, float(np.max(hi - 1.0)), float(np.max(1.0 - lo)))
    return worst


def subset_rip_constant(
    D, s_rows: int, s_cols: int, mode: str = "exhaustive", n_samples: int = DEFAULT_SAMPLES, rng=None
) -> float:
    """Subset RIP constant: eigenvalues of row-and-column restricted Grams around ``s_rows / n``."""
    D = np.asarray(D, dtype=float)
    n, m = D.shape
    if not (1 <= s_rows <= n and 1 <= s_cols <= m):
        raise ValueError(f"(s_rows, s_cols)=({s_rows}, {s_cols}) outside matrix shape {D.shape}")
    centre = s_rows / n
    worst = 0.0
    if mode == "exhaustive":
        total = math.comb(n, s_rows) * math.comb(m, s_cols)
        if total > MAX_ENUMERATION:
            raise EnumerationLimitError(f"{total} row/column subset pairs exceed {MAX_ENUMERATION}")
        cols = _subsets(m, s_cols, "exhaustive", 0, None)
        for rows in itertools.combinations(range(n), s_rows):
            sub = D[np.asarray(rows)][:, cols].transpose(1, 0, 2)
            lo, hi = _gram_extremes(sub)
            worst = max(worst, float(np.max(hi - centre)), float(np.max(centre - lo)))
        return worst
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(rng)
    rows = _subsets(n, s_rows, "sampled", n_samples, rng)
    cols = _subsets(m, s_cols, "sampled", n_samples, rng)
    sub = D[rows[:, :, None], cols[:, None, :]]
    lo, hi = _gram_extremes(sub)
    return max(0.0, float(np.max(hi - centre)), float(np.max(centre - lo)))


def _layer_sparsities(stack: RepresentationStack, rtol: float):
    return [len(s) for s in stack.pattern(rtol).supports]


def uniqueness_layered(model: MultiLayerModel, stack: RepresentationStack, rtol: float = ZERO_RTOL):
    """Layer-by-layer coherence condition ``s_i < (1 + 1/mu(D_i)) / 2``.

    Returns ``(unique, margins)`` with margins ``(1 + 1/mu)/2 - s_i``.
    """
    margins = []
    for D, s in zip(model.layers, _layer_sparsities(stack, rtol)):
        mu = mutual_coherence(D)
        bound = math.inf if mu == 0 else 0.5 * (1.0 + 1.0 / mu)
        margins.append(bound - s)
    return all(mg > 0 for mg in margins), margins


def uniqueness_effective(model: MultiLayerModel, stack: RepresentationStack, rtol: float = ZERO_RTOL):
    """Coherence condition on the effective dictionary ``D_(k)``; returns ``(unique, margin)``."""
    s_k = _layer_sparsities(stack, rtol)[-1]
    mu = mutual_coherence(effective_dictionary(model, model.depth))
    bound = math.inf if mu == 0 else 0.5 * (1.0 + 1.0 / mu)
    return bound - s_k > 0, bound - s_k


@dataclass(frozen=True)
class HolisticUniqueness:
    unique: bool
    threshold: float
    sparsity: int
    rank: int
    spark: float
    conservative: bool


def holistic_threshold(spark_value: float, rank: int) -> float:
    """Largest deepest sparsity with a guaranteed unique representation."""
    return (spark_value - 1.0) / 2.0 + rank


def uniqueness_holistic(
    model: MultiLayerModel,
    stack: RepresentationStack,
    max_cols: int = SPARK_MAX_COLS,
    rtol: float = ZERO_RTOL,
) -> HolisticUniqueness:
    """Spark-plus-rank condition ``s_k <= (spark(D_(k)) - 1)/2 + rank(Phi^Lambda_k)``.

    When the spark is out of reach the coherence bound ``1 + 1/mu`` stands in
    for it and the result is flagged conservative.
    """
    pattern = stack.pattern(rtol)
    con = build_phi(model, pattern.cosupports[:-1], pattern.supports[-1])
    Dk = effective_dictionary(model, model.depth)
    try:
        sp, conservative = float(spark(Dk, max_cols=max_cols)), False
    except EnumerationLimitError:
        mu = mutual_coherence(Dk)
        sp, conservative = (math.inf if mu == 0 else 1.0 + 1.0 / mu), True
    s_k = len(pattern.supports[-1])
    thr = holistic_threshold(sp, con.rank)
    return HolisticUniqueness(s_k <= thr, thr, s_k, con.rank, sp, conservative)


def stability_bound(model: MultiLayerModel, stack: RepresentationStack, eps: float, rtol: float = ZERO_RTOL):
    """Worst-case squared error bound per layer for the sparse deep pursuit problem."""
    out = []
    acc = 4.0 * eps**2
    for D, s in zip(model.layers, _layer_sparsities(stack, rtol)):
        denom = 1.0 - (2 * s - 1) * mutual_coherence(D)
        if denom <= 0:
            raise ValueError("stability condition violated: 1 - (2 s_j - 1) mu(D_j) <= 0")
        acc /= denom
        out.append(acc)
    return out


def layer_score(gamma_min: float, mu_r: float, remaining: int) -> float:
    """Layer-selection score used by the holistic pursuit; ``remaining`` > 0."""
    return gamma_min / (1.0 + (1.0 + mu_r * (remaining - 1)) / math.sqrt(remaining))


@dataclass(frozen=True)
class ConditionStep:
    iteration: int
    layer: int
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


def row_coherences(model: MultiLayerModel) -> list:
    """Row mutual coherence of each ``D_(i+1,k)`` (row-normalised)."""
    out = []
    for P in propagation_matrices(model):
        out.append(row_mutual_coherence(P) if P.shape[0] > 1 else 0.0)
    return out


def holistic_condition_check(
    model: MultiLayerModel,
    stack: RepresentationStack,
    sigma: float,
    kappa_L: float,
    gamma_mins=None,
    cosparsities=None,
    rtol: float = ZERO_RTOL,
) -> list:
    """Evaluate the per-iteration success condition of the holistic pursuit.

    The layer picked at every iteration is the one maximising the score,
    as the pursuit's selection rule does.  Returns one
    :class:`ConditionStep` per iteration.
    """
    if kappa_L <= 0:
        raise ValueError("kappa_L must be positive")
    pattern = stack.pattern(rtol)
    k = model.depth
    if cosparsities is None:
        cosparsities = pattern.cosparsities[:-1]
    if gamma_mins is None:
        gamma_mins = [
            float(np.min(np.abs(stack.gammas[i][pattern.supports[i]]))) if len(pattern.supports[i]) else 0.0
            for i in range(k - 1)
        ]
    mu_r = row_coherences(model)
    s_k = len(pattern.supports[-1])
    m_k, n = model.dims[-1], model.signal_dim
    scale = 8.0 * sigma / kappa_L * math.sqrt(math.log(m_k) / n)
    found = [0] * (k - 1)
    steps = []
    for j in range(1, int(sum(cosparsities)) + 1):
        scores = [
            layer_score(gamma_mins[i], mu_r[i], cosparsities[i] - found[i]) if found[i] < cosparsities[i] else -math.inf
            for i in range(k - 1)
        ]
        g = int(np.argmax(scores))
        lhs = math.sqrt(max(s_k - j, j)) * scale
        steps.append(ConditionStep(j, g + 1, lhs, scores[g]))
        found[g] += 1
    return steps


def metrics_report(
    model: MultiLayerModel,
    stack: RepresentationStack | None = None,
    eps: float | None = None,
    max_order: int = 4,
    mode: str = "exhaustive",
    max_cols: int = SPARK_MAX_COLS,
    rng=None,
) -> dict:
    """JSON-ready summary of all diagnostics for a model (and optionally a stack)."""
    k = model.depth
    report: dict = {"dims": list(model.dims)}
    mu = {f"D{i}": mutual_coherence(model.layer(i)) for i in range(1, k + 1) if model.layer(i).shape[1] > 1}
    if k > 1:
        mu[f"D(1,{k})"] = mutual_coherence(effective_dictionary(model, k))
    report["mu"] = mu
    report["mu_R"] = {
        f"D({i + 2},{k})": (row_mutual_coherence(P) if P.shape[0] > 1 else None)
        for i, P in enumerate(propagation_matrices(model))
    }
    Dk = effective_dictionary(model, k)
    try:
        report["spark"] = spark(Dk, max_cols=max_cols)
    except EnumerationLimitError:
        report["spark"] = "exceeds-cap"

    def _delta(D, s):
        try:
            return rip_constant(D, s, mode=mode, rng=rng)
        except EnumerationLimitError:
            return rip_constant(D, s, mode="sampled", rng=rng)

    table = {}
    for s in range(1, min(max_order, Dk.shape[1]) + 1):
        table[str(s)] = _delta(Dk, s)
    report["delta_s"] = {f"D(1,{k})": table, "mode": mode}
    if stack is None:
        return report

    pattern = stack.pattern(ZERO_RTOL)
    sp = pattern.sparsities
    subset = {}
    for j in range(2, k + 1):
        D = model.layer(j)
        try:
            val = subset_rip_constant(D, sp[j - 2], sp[j - 1], mode=mode, rng=rng)
        except EnumerationLimitError:
            val = subset_rip_constant(D, sp[j - 2], sp[j - 1], mode="sampled", rng=rng)
        subset[f"D{j}:({sp[j - 2]},{sp[j - 1]})"] = val
    report["subset_delta"] = subset
    lay_ok, margins = uniqueness_layered(model, stack)
    eff_ok, eff_margin = uniqueness_effective(model, stack)
    hol = uniqueness_holistic(model, stack, max_cols=max_cols)
    report["uniqueness"] = {
        "layered": lay_ok,
        "layered_margins": margins,
        "effective": eff_ok,
        "effective_margin": eff_margin,
        "holistic": hol.unique,
        "holistic_threshold": hol.threshold,
        "rank": hol.rank,
        "holistic_conservative": hol.conservative,
    }
    if eps is not None:
        try:
            report["stability_bounds"] = stability_bound(model, stack, eps)
        except ValueError as err:
            report["stability_bounds"] = str(err)
    return report
