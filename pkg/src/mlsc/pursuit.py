"""Pursuit algorithms for multi-layer sparse signals.

* :func:`layered_pursuit` - estimate every layer from the previous one.
* :func:`projection_pursuit` - estimate the deepest layer against the
  effective dictionary and propagate back.
* :func:`holistic_pursuit` - alternate a subspace-constrained Lasso on the
  deepest layer with a greedy search for mid-layer co-support rows.

The l1 subproblems are solved in penalised form.  :func:`lasso` runs
accelerated proximal gradient (with an active-set polish),
:func:`constrained_lasso_admm` handles the subspace constraint
``g = K alpha``.  :func:`select_eta` picks the largest penalty whose fit
residual stays under a target, and :func:`lasso_l1_budget` maps an l1
budget to a penalty by bisection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import admm_loop, fista_loop
from .metrics import layer_score, row_coherences
from .model import (
    MultiLayerModel,
    RepresentationStack,
    effective_dictionary,
    kernel_basis,
    propagation_matrices,
    validate_stack,
)


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def hard_threshold(v, s: int) -> np.ndarray:
    """Keep the ``s`` largest-magnitude entries (ties go to the lower index)."""
    v = np.asarray(v, dtype=float)
    if not 0 <= s <= v.size:
        raise ValueError(f"s={s} outside 0..{v.size}")
    out = np.zeros_like(v)
    if s:
        keep = np.argsort(-np.abs(v), kind="stable")[:s]
        out[keep] = v[keep]
    return out


@dataclass
class SolverParams:
    """Tuning of the l1 solvers.  Tolerances are absolute on the residual norms."""

    eta: float | None = None
    rho: float = 1.0
    max_iters: int = 5000
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    lasso_tol: float = 1e-10
    lasso_max_iters: int = 20000
    eta_steps: int = 30
    eta_floor: float = 1e-6

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if min(self.tol_primal, self.tol_dual, self.lasso_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1 or self.lasso_max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.eta is not None and self.eta < 0:
            raise ValueError("eta must be nonnegative")


@dataclass
class LassoResult:
    coef: np.ndarray
    n_iter: int
    converged: bool
    eta: float


def _polish(G, b, x, eta):
    """Solve the KKT system on the support/sign pattern of ``x``; None if inconsistent."""
    A = np.flatnonzero(x)
    if A.size == 0:
        return None
    s = np.sign(x[A])
    try:
        xa = np.linalg.solve(G[np.ix_(A, A)], b[A] - eta * s)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.sign(xa) != s):
        return None
    out = np.zeros_like(x)
    out[A] = xa
    corr = b - G @ out
    if np.max(np.abs(corr)) > eta * (1 + 1e-9) + 1e-12:
        return None
    return out


def lasso(D, y, eta: float, x0=None, tol: float = 1e-10, max_iters: int = 20000, polish: bool = True) -> LassoResult:
    """Minimise ``0.5 ||D g - y||^2 + eta ||g||_1`` by FISTA with adaptive restart.

    The iterate is polished by solving the optimality conditions on its
    support when that yields a consistent solution.
    """
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    G = D.T @ D
    b = D.T @ y
    L = float(np.linalg.eigvalsh(G)[-1]) if G.size else 1.0
    if L == 0:
        return LassoResult(np.zeros(D.shape[1]), 0, True, eta)
    x = np.zeros(D.shape[1]) if x0 is None else np.array(x0, dtype=float)
    x, it, converged = fista_loop(G, b, L, float(eta), x, float(tol), int(max_iters))
    if polish and eta > 0:
        p = _polish(G, b, x, eta)
        if p is not None:
            x = p
            converged = True
    return LassoResult(x, it, converged, eta)


@dataclass
class AdmmResult:
    """Constrained Lasso solution.

    ``gamma`` equals ``K @ alpha`` and is feasible by construction;
    ``split`` is the soft-thresholded copy, which is exactly sparse.
    With tracking on, ``objective`` holds ``0.5 ||y - D K a||^2 + eta ||K a||_1``
    and ``primal_residual`` holds ``||K a - split||`` after every iteration.
    """

    gamma: np.ndarray
    alpha: np.ndarray
    split: np.ndarray
    dual: np.ndarray
    n_iter: int
    converged: bool
    eta: float
    objective: list = field(default_factory=list)
    primal_residual: list = field(default_factory=list)


class _AdmmSystem:
    """Factorisation of the alpha-step shared by all penalties for one ``K``."""

    def __init__(self, D, y, K, rho):
        self.D = np.asarray(D, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.K = np.ascontiguousarray(K, dtype=float)
        self.rho = rho
        DK = np.ascontiguousarray(self.D @ self.K)
        self.DK = DK
        self.KT = np.ascontiguousarray(self.K.T)
        self.b = DK.T @ self.y
        self.H = np.linalg.inv(DK.T @ DK + rho * np.eye(self.K.shape[1]))

    def least_squares(self):
        alpha = np.linalg.lstsq(self.DK, self.y, rcond=None)[0]
        return alpha

    def objective(self, alpha, eta):
        r = self.y - self.DK @ alpha
        return 0.5 * float(r @ r) + eta * float(np.sum(np.abs(self.K @ alpha)))

    def run(self, eta, alpha0, u0, tol_primal, tol_dual, max_iters, track=False):
        m = self.K.shape[0]
        alpha = np.zeros(self.K.shape[1]) if alpha0 is None else np.array(alpha0, dtype=float)
        u = np.zeros(m) if u0 is None else np.array(u0, dtype=float)
        alpha, g, u, it, converged, hist = admm_loop(
            self.K, self.KT, self.H, self.b, self.DK, self.y, float(self.rho), float(eta),
            alpha, u, float(tol_primal), float(tol_dual), int(max_iters), bool(track),
        )
        return alpha, g, u, it, converged, hist


def constrained_lasso_admm(
    D, y, K, eta: float, params: SolverParams | None = None, alpha0=None, u0=None, track: bool = False, system=None
) -> AdmmResult:
    """Minimise ``0.5 ||y - D K a||^2 + eta ||g||_1`` subject to ``g = K a`` by ADMM.

    ``K`` must have orthonormal columns.  The dual variable is kept in
    scaled form.  ``eta = 0`` is solved directly as least squares on
    ``range(K)``.
    """
    params = params or SolverParams()
    K = np.asarray(K, dtype=float)
    if K.shape[1] == 0:
        m = K.shape[0]
        z = np.zeros(m)
        return AdmmResult(z, np.zeros(0), z.copy(), z.copy(), 0, True, eta, [])
    sysm = system if system is not None else _AdmmSystem(D, y, K, params.rho)
    if eta == 0:
        alpha = sysm.least_squares()
        g = K @ alpha
        return AdmmResult(g, alpha, g.copy(), np.zeros(K.shape[0]), 0, True, 0.0, [sysm.objective(alpha, 0.0)])
    alpha, split, u, it, ok, hist = sysm.run(
        eta, alpha0, u0, params.tol_primal, params.tol_dual, params.max_iters, track
    )
    return AdmmResult(K @ alpha, alpha, split, u, it, ok, eta, hist[:, 0].tolist(), hist[:, 1].tolist())


def select_eta(solve, residual, eta_max: float, target: float, steps: int = 30, floor: float = 1e-6):
    """Largest penalty on a log grid whose fit residual is at most ``target``.

    ``solve(eta, warm)`` returns a solution, ``residual(sol)`` its squared
    fit residual.  Bisection runs on ``[floor * eta_max, eta_max]``; when
    even the smallest penalty misses the target (always the case for a
    zero target) the penalty drops to 0.  Returns ``(eta, solution)``.
    """
    if target <= 0 or eta_max <= 0:
        return 0.0, solve(0.0, None)
    lo = floor * eta_max
    sol_lo = solve(lo, None)
    if residual(sol_lo) > target:
        return 0.0, solve(0.0, sol_lo)
    hi = eta_max
    best = (lo, sol_lo)
    log_lo, log_hi = math.log(lo), math.log(hi)
    for _ in range(steps):
        mid = math.exp(0.5 * (log_lo + log_hi))
        sol = solve(mid, best[1])
        if residual(sol) <= target:
            log_lo = math.log(mid)
            best = (mid, sol)
        else:
            log_hi = math.log(mid)
    return best


def lasso_discrepancy(D, y, target: float, params: SolverParams | None = None) -> LassoResult:
    """Lasso with the largest penalty keeping ``||y - D g||^2 <= target``."""
    params = params or SolverParams()
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)

    def solve(eta, warm):
        if eta == 0:
            return LassoResult(np.linalg.lstsq(D, y, rcond=None)[0], 0, True, 0.0)
        x0 = None if warm is None else warm.coef
        return lasso(D, y, eta, x0=x0, tol=params.lasso_tol, max_iters=params.lasso_max_iters)

    def residual(sol):
        r = y - D @ sol.coef
        return float(r @ r)

    _, sol = select_eta(solve, residual, float(np.max(np.abs(D.T @ y))), target, params.eta_steps, params.eta_floor)
    return sol


def lasso_l1_budget(D, y, budget: float, params: SolverParams | None = None, steps: int = 60) -> LassoResult:
    """Constrained form ``min ||D g - y||^2  s.t.  ||g||_1 <= budget`` via bisection on the penalty.

    The l1 norm of the penalised solution decreases monotonically with
    the penalty, so the smallest penalty meeting the budget is found.
    """
    params = params or SolverParams()
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    ls = np.linalg.lstsq(D, y, rcond=None)[0]
    if np.sum(np.abs(ls)) <= budget:
        return LassoResult(ls, 0, True, 0.0)
    lo, hi = 0.0, float(np.max(np.abs(D.T @ y)))
    best = LassoResult(np.zeros(D.shape[1]), 0, True, hi)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        sol = lasso(D, y, mid, x0=best.coef, tol=params.lasso_tol, max_iters=params.lasso_max_iters)
        if np.sum(np.abs(sol.coef)) <= budget:
            hi, best = mid, sol
        else:
            lo = mid
    return best


@dataclass(frozen=True)
class IterationRecord:
    """One holistic iteration.

    ``layer`` is 1-based, ``row`` 0-based; ``residual`` is ``||y - D_(k) g_k||``
    for the estimate that drove the choice; ``violation`` is the largest
    ``|row . g_k| / ||g_k||`` over rows chosen in earlier iterations and
    ``dof`` the number of free dimensions after adding the new row.
    """

    layer: int
    row: int
    residual: float
    eta: float
    violation: float = 0.0
    dof: int = -1


@dataclass
class PursuitResult:
    stack: RepresentationStack
    residuals: tuple
    status: str
    log: list = field(default_factory=list)
    eta: float | None = None
    cosupports: tuple | None = None
    deep_support: np.ndarray | None = None
    support_recovered: dict | None = None

    @property
    def gammas(self) -> tuple:
        return self.stack.gammas


def _finish(model, gammas, status, truth=None, **extra) -> PursuitResult:
    x_hat = model.layers[0] @ gammas[0]
    stack = RepresentationStack(x_hat, tuple(gammas))
    report = validate_stack(model, stack, tol=np.inf)
    res = PursuitResult(stack, report.residuals[1:], status, **extra)
    if truth is not None:
        res.support_recovered = support_flags(res, truth)
    return res


def support_flags(result: PursuitResult, truth: RepresentationStack, rtol: float = 1e-6) -> dict:
    """Compare estimated deepest support (and mid-layer co-supports, when estimated) to the truth."""
    tp = truth.pattern(1e-9)
    deep = result.deep_support
    if deep is None:
        g = result.stack.gammas[-1]
        deep = np.flatnonzero(np.abs(g) > rtol * np.linalg.norm(g))
    flags = {"deep_support": bool(np.array_equal(np.sort(deep), tp.supports[-1]))}
    if result.cosupports is not None:
        flags["cosupports"] = all(
            np.array_equal(np.sort(est), true) for est, true in zip(result.cosupports, tp.cosupports[:-1])
        )
    flags["all"] = all(flags.values())
    return flags


def layered_pursuit(
    model: MultiLayerModel,
    y,
    variant: str = "thresholding",
    sparsities=None,
    budgets=None,
    params: SolverParams | None = None,
    truth: RepresentationStack | None = None,
) -> PursuitResult:
    """Estimate ``g_1, ..., g_k`` one layer at a time.

    ``variant="thresholding"`` keeps ``sparsities[i]`` entries of
    ``D_i^T g_{i-1}``; ``variant="bp"`` solves an l1-budgeted least squares
    per layer with ``budgets[i]``.  The outputs are not chained
    (``g_{i-1} != D_i g_i`` in general).
    """
    prev = np.asarray(y, dtype=float)
    gammas = []
    for i, D in enumerate(model.layers):
        if variant == "thresholding":
            g = hard_threshold(D.T @ prev, int(sparsities[i]))
        elif variant == "bp":
            g = lasso_l1_budget(D, prev, float(budgets[i]), params).coef
        else:
            raise ValueError(f"unknown variant {variant!r}")
        gammas.append(g)
        prev = g
    return _finish(model, gammas, "converged", truth)


def _back_propagate(model, gk) -> list:
    gammas = [gk]
    for D in reversed(model.layers[1:]):
        gammas.insert(0, D @ gammas[0])
    return gammas


def projection_pursuit(
    model: MultiLayerModel,
    y,
    variant: str = "bp",
    sparsity: int | None = None,
    budget: float | None = None,
    eta: float | None = None,
    sigma: float | None = None,
    params: SolverParams | None = None,
    truth: RepresentationStack | None = None,
) -> PursuitResult:
    """Estimate ``g_k`` against ``D_(k)`` then set ``g_i = D_{i+1} g_{i+1}``.

    The ``bp`` variant accepts exactly one of: an l1 ``budget``, a fixed
    penalty ``eta``, or a noise level ``sigma`` (penalty chosen so that the
    squared residual is at most ``n sigma^2``).
    """
    params = params or SolverParams()
    y = np.asarray(y, dtype=float)
    Dk = effective_dictionary(model, model.depth)
    used_eta = None
    status = "converged"
    if variant == "thresholding":
        gk = hard_threshold(Dk.T @ y, int(sparsity))
    elif variant == "bp":
        given = [v is not None for v in (budget, eta, sigma)]
        if sum(given) != 1:
            raise ValueError("give exactly one of budget, eta, sigma")
        if budget is not None:
            sol = lasso_l1_budget(Dk, y, budget, params)
        elif eta == 0:
            sol = LassoResult(np.linalg.lstsq(Dk, y, rcond=None)[0], 0, True, 0.0)
        elif eta is not None:
            sol = lasso(Dk, y, eta, tol=params.lasso_tol, max_iters=params.lasso_max_iters)
        else:
            sol = lasso_discrepancy(Dk, y, y.size * sigma**2, params)
        gk, used_eta = sol.coef, sol.eta
        status = "converged" if sol.converged else "max-iters"
    else:
        raise ValueError(f"unknown variant {variant!r}")
    deep = np.flatnonzero(gk)
    return _finish(model, _back_propagate(model, gk), status, truth, eta=used_eta, deep_support=deep)


def choose_layer(gamma_mins, row_coherence, cosparsities, found) -> int:
    """Mid-layer (1-based) to receive the next co-support element.

    ``gamma_mins`` may be ``None``, in which case every layer is assumed to
    share the same minimal value.  Ties go to the lowest layer.
    """
    best, best_score = None, -math.inf
    for i, (mu, ell, f) in enumerate(zip(row_coherence, cosparsities, found)):
        if f >= ell:
            continue
        gmin = 1.0 if gamma_mins is None else gamma_mins[i]
        score = layer_score(gmin, mu, ell - f)
        if score > best_score:
            best, best_score = i, score
    if best is None:
        raise ValueError("co-support complete: no layer has elements left to find")
    return best + 1


def _violation(props, found, g) -> float:
    nrm = np.linalg.norm(g)
    if nrm == 0 or not any(found):
        return 0.0
    return max(float(np.max(np.abs(P[f] @ g))) for P, f in zip(props, found) if f) / nrm


def next_cosupport_row(P, gamma, chosen, row_norms=None) -> int:
    """Unchosen row of ``P`` with the smallest ``|row . gamma|`` (0-based, lowest index on ties)."""
    resp = np.abs(P @ gamma)
    if row_norms is not None:
        resp = resp / np.where(row_norms > 0, row_norms, 1.0)
    resp[list(chosen)] = np.inf
    if np.all(np.isinf(resp)):
        raise ValueError("every row is already in the co-support")
    return int(np.argmin(resp))


class _DeepSolver:
    """Constrained Lasso on ``g_k`` with the current kernel basis and penalty rule."""

    def __init__(self, Dk, y, params, eta, sigma, schedule="every"):
        if schedule not in ("every", "ends"):
            raise ValueError(f"unknown eta schedule {schedule!r}")
        self.Dk, self.y, self.params = Dk, np.asarray(y, dtype=float), params
        self.eta, self.sigma, self.schedule = eta, sigma, schedule
        self.frozen = None
        self.eta_max = float(np.max(np.abs(Dk.T @ self.y)))
        self.prev = None

    def residual(self, res: AdmmResult) -> float:
        r = self.y - self.Dk @ res.gamma
        return float(r @ r)

    def solve(self, K, final=False) -> AdmmResult:
        p = self.params
        sysm = _AdmmSystem(self.Dk, self.y, K, p.rho)
        # warm start: previous coefficients projected on the new basis
        a0 = u0 = None
        if self.prev is not None:
            a0 = K.T @ self.prev.gamma
            u0 = self.prev.dual

        def run(eta, warm):
            if warm is None:
                return constrained_lasso_admm(self.Dk, self.y, K, eta, p, a0, u0, system=sysm)
            return constrained_lasso_admm(self.Dk, self.y, K, eta, p, warm.alpha, warm.dual, system=sysm)

        if self.eta is not None:
            res = run(self.eta, None)
        elif self.frozen is not None and not final:
            res = run(self.frozen, None)
        else:
            target = self.y.size * self.sigma**2
            _, res = select_eta(run, self.residual, self.eta_max, target, p.eta_steps, p.eta_floor)
            if self.schedule == "ends":
                # later iterations reuse the penalty picked on the unconstrained problem
                self.frozen = res.eta
        self.prev = res
        return res


def holistic_pursuit(
    model: MultiLayerModel,
    y,
    cosparsities,
    gamma_mins=None,
    eta: float | None = None,
    sigma: float | None = None,
    params: SolverParams | None = None,
    truth: RepresentationStack | None = None,
    normalize_rows: bool = False,
    eta_schedule: str = "every",
) -> PursuitResult:
    """Joint estimate of all layers via co-support search on the mid-layers.

    Each iteration solves the subspace-constrained Lasso for ``g_k``, picks
    a mid-layer with :func:`choose_layer`, adds the not-yet-chosen row of
    ``D_(g+1,k)`` with the smallest ``|row . g_k|`` to that layer's
    co-support and shrinks the subspace to the kernel of all chosen rows.
    Give the penalty either directly (``eta``) or through the noise level
    ``sigma``.  With ``sigma``, ``eta_schedule="every"`` re-selects the
    penalty at each solve; ``"ends"`` selects it on the first and the final
    solve only, which is several times faster.
    """
    if (eta is None) == (sigma is None):
        raise ValueError("give exactly one of eta and sigma")
    params = params or SolverParams()
    y = np.asarray(y, dtype=float)
    k = model.depth
    cosparsities = [int(c) for c in cosparsities]
    if len(cosparsities) != k - 1:
        raise ValueError(f"need {k - 1} co-sparsity levels")
    Dk = effective_dictionary(model, k)
    props = propagation_matrices(model)
    mu_r = row_coherences(model) if k > 1 else []
    row_norms = [np.linalg.norm(P, axis=1) for P in props]
    solver = _DeepSolver(Dk, y, params, eta, sigma, eta_schedule)
    mk = Dk.shape[1]
    K = np.eye(mk)
    found = [[] for _ in range(k - 1)]
    log = []
    for _ in range(sum(cosparsities)):
        res = solver.solve(K)
        viol = _violation(props, found, res.gamma)
        g = choose_layer(gamma_mins, mu_r, cosparsities, [len(f) for f in found])
        j = next_cosupport_row(props[g - 1], res.gamma, found[g - 1], row_norms[g - 1] if normalize_rows else None)
        found[g - 1].append(j)
        phi = np.vstack([P[f] for P, f in zip(props, found)])
        K, _ = kernel_basis(phi, ncols=mk)
        log.append(IterationRecord(g, j, math.sqrt(solver.residual(res)), res.eta, viol, K.shape[1]))
        if K.shape[1] == 0:
            gammas = _back_propagate(model, np.zeros(mk))
            return _finish(model, gammas, "infeasible", None, log=log,
                           cosupports=tuple(np.array(f) for f in found))
    res = solver.solve(K, final=True)
    gk = res.gamma
    gammas = [props[i] @ gk for i in range(k - 1)] + [gk]
    status = "converged" if res.converged else "max-iters"
    deep = np.flatnonzero(res.split) if res.eta > 0 else None
    return _finish(
        model, gammas, status, truth, log=log, eta=res.eta,
        cosupports=tuple(np.sort(np.array(f, dtype=int)) for f in found), deep_support=deep,
    )


def holistic_pursuit_unknown(
    model: MultiLayerModel,
    y,
    total_cosparsity: int | None = None,
    residual_tol: float | None = None,
    eta: float | None = None,
    sigma: float | None = None,
    params: SolverParams | None = None,
) -> PursuitResult:
    """Experimental variant for unknown per-layer co-sparsities.

    Each iteration takes the smallest ``|row . g_k|`` over the unchosen
    rows of every mid-layer.  Stops after ``total_cosparsity`` rows or
    before the squared fit residual would exceed ``residual_tol``.
    """
    if total_cosparsity is None and residual_tol is None:
        raise ValueError("give total_cosparsity and/or residual_tol")
    if (eta is None) == (sigma is None):
        raise ValueError("give exactly one of eta and sigma")
    params = params or SolverParams()
    y = np.asarray(y, dtype=float)
    k = model.depth
    Dk = effective_dictionary(model, k)
    props = propagation_matrices(model)
    mk = Dk.shape[1]
    solver = _DeepSolver(Dk, y, params, eta, sigma)
    K = np.eye(mk)
    found = [[] for _ in range(k - 1)]
    log = []
    limit = total_cosparsity if total_cosparsity is not None else sum(P.shape[0] for P in props)
    res = solver.solve(K)
    while len(log) < limit:
        best = (math.inf, None, None)
        for i, P in enumerate(props):
            resp = np.abs(P @ res.gamma)
            resp[found[i]] = np.inf
            j = int(np.argmin(resp))
            if resp[j] < best[0]:
                best = (resp[j], i, j)
        if best[1] is None:
            break
        trial = [list(f) for f in found]
        trial[best[1]].append(best[2])
        phi = np.vstack([P[f] for P, f in zip(props, trial)])
        K_new, _ = kernel_basis(phi, ncols=mk)
        if K_new.shape[1] == 0:
            break
        new = solver.solve(K_new)
        if residual_tol is not None and solver.residual(new) > residual_tol:
            break
        found, K, res = trial, K_new, new
        log.append(IterationRecord(best[1] + 1, best[2], math.sqrt(solver.residual(res)), res.eta,
                                   _violation(props, found, res.gamma), K.shape[1]))
    gk = res.gamma
    gammas = [props[i] @ gk for i in range(k - 1)] + [gk]
    return _finish(model, gammas, "converged" if res.converged else "max-iters", None, log=log,
                   eta=res.eta, cosupports=tuple(np.sort(np.array(f, dtype=int)) for f in found))
