import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import orthonormal, small_instance
from kkt import constrained_instance, constrained_lasso_kkt, lasso_kkt
from mlsc.metrics import layer_score, mutual_coherence, row_mutual_coherence
from mlsc.model import MultiLayerModel, build_phi, kernel_basis, validate_stack
from mlsc.pursuit import (
    SolverParams,
    choose_layer,
    constrained_lasso_admm,
    hard_threshold,
    holistic_pursuit,
    holistic_pursuit_unknown,
    lasso,
    lasso_discrepancy,
    lasso_l1_budget,
    layered_pursuit,
    next_cosupport_row,
    projection_pursuit,
    select_eta,
    soft_threshold,
)
from mlsc.sampler import NoiseSpec, SamplerConfig, add_noise, sample_model, sample_signal, trial_rng


def hadamard(n):
    H = np.array([[1.0]])
    while H.shape[0] < n:
        H = np.block([[H, H], [H, -H]])
    return H


# -- primitives --------------------------------------------------------------


def test_hard_threshold_examples():
    np.testing.assert_array_equal(hard_threshold([3, -1, 2], 2), [3, 0, 2])
    np.testing.assert_array_equal(hard_threshold([3, -1, 2], 0), [0, 0, 0])
    np.testing.assert_array_equal(hard_threshold([1, -1, 1], 2), [1, -1, 0])
    with pytest.raises(ValueError):
        hard_threshold([1, 2], 3)


def test_soft_threshold():
    np.testing.assert_allclose(soft_threshold(np.array([3.0, -0.5, -2.0]), 1.0), [2.0, 0.0, -1.0])


def test_solver_params_validation():
    with pytest.raises(ValueError):
        SolverParams(rho=0)
    with pytest.raises(ValueError):
        SolverParams(tol_primal=0)
    with pytest.raises(ValueError):
        SolverParams(max_iters=0)
    with pytest.raises(ValueError):
        SolverParams(eta=-1)


def test_lasso_zero_penalty_inverts_square_system(rng):
    D = orthonormal(6, rng) + 0.3 * np.eye(6)
    y = rng.standard_normal(6)
    np.testing.assert_allclose(lasso(D, y, 0.0).coef, np.linalg.solve(D, y), atol=1e-7)


def test_lasso_large_penalty_gives_zero(rng):
    D = rng.standard_normal((8, 5))
    y = rng.standard_normal(8)
    eta = np.max(np.abs(D.T @ y))
    np.testing.assert_array_equal(lasso(D, y, eta).coef, np.zeros(5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.02, 0.9))
def test_lasso_matches_kkt_enumeration(seed, frac):
    r = np.random.default_rng(seed)
    D = r.standard_normal((8, 6))
    y = r.standard_normal(8)
    eta = frac * np.max(np.abs(D.T @ y))
    np.testing.assert_allclose(lasso(D, y, eta).coef, lasso_kkt(D, y, eta), atol=1e-6)


def test_lasso_subgradient_conditions(rng):
    D = rng.standard_normal((20, 40))
    y = rng.standard_normal(20)
    eta = 0.2 * np.max(np.abs(D.T @ y))
    res = lasso(D, y, eta)
    x = res.coef
    corr = D.T @ (y - D @ x)
    on = x != 0
    assert res.converged
    np.testing.assert_allclose(corr[on], eta * np.sign(x[on]), atol=1e-8)
    assert np.max(np.abs(corr[~on])) <= eta + 1e-8


def test_l1_budget_mapping(rng):
    D = rng.standard_normal((10, 15))
    y = rng.standard_normal(10)
    full = lasso(D, y, 0.05).coef
    budget = 0.5 * np.sum(np.abs(full))
    sol = lasso_l1_budget(D, y, budget)
    assert np.sum(np.abs(sol.coef)) <= budget + 1e-9
    assert np.sum(np.abs(sol.coef)) == pytest.approx(budget, rel=1e-4)
    np.testing.assert_allclose(sol.coef, lasso(D, y, sol.eta).coef, atol=1e-8)
    with pytest.raises(ValueError):
        lasso_l1_budget(D, y, -1.0)


def test_l1_budget_above_least_squares_norm(rng):
    D = rng.standard_normal((10, 4))
    y = rng.standard_normal(10)
    ls = np.linalg.lstsq(D, y, rcond=None)[0]
    sol = lasso_l1_budget(D, y, 2 * np.sum(np.abs(ls)))
    np.testing.assert_allclose(sol.coef, ls)
    assert sol.eta == 0.0


def test_discrepancy_rule(rng):
    D = rng.standard_normal((30, 60)) / math.sqrt(30)
    g = np.zeros(60)
    g[[3, 17, 40]] = [1.0, -2.0, 1.5]
    sigma = 0.05
    y = D @ g + sigma * rng.standard_normal(30)
    target = 30 * sigma**2
    sol = lasso_discrepancy(D, y, target)
    r = y - D @ sol.coef
    assert r @ r <= target * (1 + 1e-9)
    # a slightly larger penalty breaks the target
    bigger = lasso(D, y, sol.eta * 1.01).coef
    rb = y - D @ bigger
    assert rb @ rb > target


def test_select_eta_zero_target():
    calls = []

    def solve(eta, warm):
        calls.append(eta)
        return eta

    eta, sol = select_eta(solve, lambda s: 1.0, 5.0, 0.0)
    assert eta == 0.0 and calls == [0.0]


# -- ADMM --------------------------------------------------------------------


def test_admm_identity_zero_penalty_is_least_squares(rng):
    D = rng.standard_normal((12, 8))
    y = rng.standard_normal(12)
    res = constrained_lasso_admm(D, y, np.eye(8), 0.0)
    np.testing.assert_allclose(res.gamma, np.linalg.lstsq(D, y, rcond=None)[0], atol=1e-10)


def test_admm_identity_matches_lasso(rng):
    D = rng.standard_normal((12, 8))
    y = rng.standard_normal(12)
    eta = 0.3 * np.max(np.abs(D.T @ y))
    res = constrained_lasso_admm(D, y, np.eye(8), eta)
    assert res.converged
    np.testing.assert_allclose(res.gamma, lasso(D, y, eta).coef, atol=1e-6)


def test_admm_output_is_feasible(rng):
    D = rng.standard_normal((10, 9))
    Phi = rng.standard_normal((4, 9))
    K, _ = kernel_basis(Phi)
    y = rng.standard_normal(10)
    res = constrained_lasso_admm(D, y, K, 0.1)
    assert np.max(np.abs(Phi @ res.gamma)) <= 1e-8
    np.testing.assert_allclose(res.gamma, K @ res.alpha)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_admm_matches_kkt_enumeration(seed):
    D, y, K, eta = constrained_instance(np.random.default_rng(seed), d=10, c=3)
    _, g = constrained_lasso_kkt(D, y, K, eta)
    res = constrained_lasso_admm(D, y, K, eta)
    assert np.linalg.norm(res.gamma - g) <= 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_admm_objective_and_residuals(seed):
    D, y, K, eta = constrained_instance(np.random.default_rng(seed))
    p = SolverParams()
    res = constrained_lasso_admm(D, y, K, eta, p, track=True)
    obj = np.array(res.objective)
    pr = np.array(res.primal_residual)
    assert res.converged and len(obj) == res.n_iter
    # ADMM is not a descent method: any increase is bounded by the primal
    # infeasibility of the previous iterate times a Lipschitz scale of the objective
    scale = eta * math.sqrt(K.shape[0]) + np.linalg.norm(D, 2) * np.linalg.norm(y)
    assert np.all(np.diff(obj) <= scale * pr[:-1] + 1e-12)
    assert obj[-1] <= obj[0] + 1e-12
    assert pr[-1] <= p.tol_primal
    assert np.linalg.norm(K @ res.alpha - res.split) <= p.tol_primal


def test_admm_empty_kernel(rng):
    res = constrained_lasso_admm(rng.standard_normal((4, 3)), rng.standard_normal(4), np.zeros((3, 0)), 0.1)
    np.testing.assert_array_equal(res.gamma, np.zeros(3))


def test_admm_max_iters_flagged(rng):
    D, y, K, eta = constrained_instance(rng, d=12, c=4)
    res = constrained_lasso_admm(D, y, K, eta, SolverParams(max_iters=2))
    assert not res.converged and res.n_iter == 2


# -- layer choice ------------------------------------------------------------


def test_choose_layer_examples():
    assert choose_layer([1.0], [0.3], [5], [2]) == 1
    # 4 remaining scores 2/3, 1 remaining scores 1/2
    assert choose_layer([1.0, 1.0], [0.0, 0.0], [4, 1], [0, 0]) == 1
    assert choose_layer([1.0, 1.0], [0.0, 0.0], [1, 4], [0, 0]) == 2
    assert choose_layer([1.0, 1.0], [0.0, 0.0], [3, 3], [1, 1]) == 1
    assert choose_layer([1.0, 5.0], [0.0, 0.0], [4, 1], [0, 0]) == 2
    assert choose_layer(None, [0.0, 0.0], [3, 3], [3, 0]) == 2
    with pytest.raises(ValueError, match="co-support complete"):
        choose_layer([1.0, 1.0], [0.0, 0.0], [2, 1], [2, 1])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 5), st.floats(0, 1), st.integers(1, 6), st.integers(0, 6)), min_size=1, max_size=4))
def test_choose_layer_is_argmax_of_scores(layers):
    gm = [a for a, _, _, _ in layers]
    mu = [b for _, b, _, _ in layers]
    ell = [c for _, _, c, _ in layers]
    found = [min(d, c) for _, _, c, d in layers]
    eligible = [i for i in range(len(layers)) if found[i] < ell[i]]
    if not eligible:
        with pytest.raises(ValueError):
            choose_layer(gm, mu, ell, found)
        return
    g = choose_layer(gm, mu, ell, found)
    scores = {i: layer_score(gm[i], mu[i], ell[i] - found[i]) for i in eligible}
    best = max(scores.values())
    assert g - 1 == min(i for i, v in scores.items() if v == best)


def test_next_cosupport_row_skips_chosen():
    P = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    g = np.array([0.0, 2.0])
    assert next_cosupport_row(P, g, []) == 0
    assert next_cosupport_row(P, g, [0]) == 1
    with pytest.raises(ValueError):
        next_cosupport_row(P, g, [0, 1, 2])


# -- layered and projection --------------------------------------------------


def test_layered_single_orthonormal_layer(rng):
    Q = orthonormal(8, rng)
    g = np.zeros(8)
    g[[1, 5]] = [2.0, -1.0]
    m = MultiLayerModel((Q,))
    r = layered_pursuit(m, Q @ g, "thresholding", sparsities=[2])
    np.testing.assert_allclose(r.gammas[0], g, atol=1e-12)
    r = layered_pursuit(m, Q @ g, "bp", budgets=[3.0])
    np.testing.assert_allclose(r.gammas[0], g, atol=1e-6)


def test_layered_sparse_second_dictionary_exact(rng):
    D1 = orthonormal(12, rng)
    D2 = np.zeros((12, 6))
    for j in range(6):
        D2[2 * j, j], D2[2 * j + 1, j] = 0.6, 0.8
    m = MultiLayerModel((D1, D2))
    assert mutual_coherence(D1) < 1e-12 and mutual_coherence(D2) == 0.0
    g2 = np.zeros(6)
    g2[[1, 4]] = [1.5, -2.0]
    g1 = D2 @ g2
    r = layered_pursuit(m, D1 @ g1, "thresholding", sparsities=[4, 2])
    np.testing.assert_allclose(r.gammas[0], g1, atol=1e-12)
    np.testing.assert_allclose(r.gammas[1], g2, atol=1e-12)
    assert max(r.residuals) < 1e-10


def test_layered_dense_second_dictionary_breaks_chain():
    model, stack, _, _ = small_instance(seed=11, dims=(50, 100, 50), s=8, ell=(6,))
    s1 = int(np.count_nonzero(stack.gammas[0]))
    r = layered_pursuit(model, stack.x, "thresholding", sparsities=[s1, 8])
    assert np.linalg.norm(r.gammas[0] - model.layers[1] @ r.gammas[1]) > 0.1 * np.linalg.norm(stack.gammas[0])


def test_layered_bad_variant(rng):
    with pytest.raises(ValueError):
        layered_pursuit(MultiLayerModel((np.eye(3),)), np.ones(3), "omp")


def _unit_model(rng):
    D1 = orthonormal(64, rng)
    D2 = np.hstack([np.eye(64), hadamard(64) / 8.0])
    return MultiLayerModel((D1, D2))


def test_projection_single_atom_thresholding(rng):
    m = _unit_model(rng)
    g = np.zeros(128)
    g[70] = -1.3
    x = m.layers[0] @ m.layers[1] @ g
    r = projection_pursuit(m, x, "thresholding", sparsity=1)
    np.testing.assert_allclose(r.gammas[-1], g, atol=1e-12)
    assert validate_stack(m, r.stack, tol=1e-10).valid


def test_projection_bp_recovers_support_under_coherence_condition(rng):
    m = _unit_model(rng)
    Dk = m.layers[0] @ m.layers[1]
    mu = mutual_coherence(Dk)
    s = 4
    assert s < 0.5 * (1 + 1 / mu)
    for t in range(5):
        g = np.zeros(128)
        idx = rng.choice(128, s, replace=False)
        g[idx] = rng.choice([-1, 1], s) * rng.uniform(1, 2, s)
        y = Dk @ g
        r = projection_pursuit(m, y, "bp", eta=1e-6 * np.max(np.abs(Dk.T @ y)))
        assert set(np.flatnonzero(r.gammas[-1])) == set(idx)
        assert validate_stack(m, r.stack, tol=1e-10).valid


def test_projection_dense_estimate_in_noise():
    model, stack, _, _ = small_instance(seed=5, dims=(50, 100, 50), s=8, ell=(6,))
    y, sigma, _ = add_noise(stack.x, NoiseSpec(snr_db=25), rng=0)
    r = projection_pursuit(model, y, "bp", sigma=sigma)
    assert np.count_nonzero(np.abs(r.gammas[0]) > 1e-12) == 100
    assert validate_stack(model, r.stack, tol=1e-10).valid


def test_projection_argument_errors(rng):
    m = _unit_model(rng)
    with pytest.raises(ValueError):
        projection_pursuit(m, np.ones(64), "bp")
    with pytest.raises(ValueError):
        projection_pursuit(m, np.ones(64), "bp", eta=1.0, sigma=1.0)
    with pytest.raises(ValueError):
        projection_pursuit(m, np.ones(64), "omp")


# -- holistic ----------------------------------------------------------------


def _instance(seed, dims=(50, 100, 50), s=8, ell=(6,), gamma_min=0.0):
    cfg = SamplerConfig(dims, s, ell, gamma_min=gamma_min)
    r = trial_rng(seed, 0)
    model = sample_model(cfg, r)
    stack, con = sample_signal(model, cfg, r)
    return model, stack, con, r


def test_holistic_noiseless_exact():
    for seed in range(5):
        model, stack, _, _ = _instance(seed)
        r = holistic_pursuit(model, stack.x, [6], sigma=0.0, truth=stack)
        assert r.status == "converged"
        assert r.support_recovered["all"]
        assert np.linalg.norm(r.gammas[-1] - stack.gammas[-1]) <= 1e-6
        assert len(r.log) == 6


def test_holistic_zero_cosparsity_is_lasso():
    model, stack, _, r = _instance(2)
    y, sigma, _ = add_noise(stack.x, NoiseSpec(snr_db=20), r)
    Dk = model.layers[0] @ model.layers[1]
    eta = 0.1 * np.max(np.abs(Dk.T @ y))
    h = holistic_pursuit(model, y, [0], eta=eta)
    p = projection_pursuit(model, y, "bp", eta=eta)
    assert h.log == []
    np.testing.assert_allclose(h.gammas[-1], p.gammas[-1], atol=1e-6)


def test_holistic_iteration_invariants():
    model, stack, _, r = _instance(4, s=11, ell=(10,))
    y, sigma, _ = add_noise(stack.x, NoiseSpec(snr_db=25), r)
    res = holistic_pursuit(model, y, [10], sigma=sigma, eta_schedule="every")
    assert len(res.log) == 10
    for j, rec in enumerate(res.log):
        assert rec.violation <= 1e-8
        assert rec.dof == 50 - (j + 1)
    chosen = [rec.row for rec in res.log]
    assert len(set(chosen)) == len(chosen)
    g = res.gammas[-1]
    assert np.max(np.abs(model.layers[1][chosen] @ g)) <= 1e-8 * np.linalg.norm(g)
    assert validate_stack(model, res.stack, tol=1e-10).valid


def test_holistic_eta_schedules_agree_on_easy_instance():
    model, stack, _, r = _instance(6)
    y, sigma, _ = add_noise(stack.x, NoiseSpec(snr_db=40), r)
    a = holistic_pursuit(model, y, [6], sigma=sigma, eta_schedule="every")
    b = holistic_pursuit(model, y, [6], sigma=sigma, eta_schedule="ends")
    assert [x.row for x in a.log] == [x.row for x in b.log]
    resid = y - model.layers[0] @ model.layers[1] @ b.gammas[-1]
    assert resid @ resid <= 50 * sigma**2 * (1 + 1e-9)


def test_holistic_three_layers_noiseless():
    model, stack, _, _ = _instance(1, dims=(30, 60, 40, 20), s=12, ell=(5, 4))
    r = holistic_pursuit(model, stack.x, [5, 4], sigma=0.0, truth=stack)
    assert r.support_recovered["all"]
    assert {rec.layer for rec in r.log} == {1, 2}
    assert np.linalg.norm(r.gammas[-1] - stack.gammas[-1]) <= 1e-6


def test_holistic_infeasible_when_kernel_vanishes(rng):
    m = MultiLayerModel((rng.standard_normal((6, 8)), rng.standard_normal((8, 4))))
    r = holistic_pursuit(m, rng.standard_normal(6), [4], eta=0.01)
    assert r.status == "infeasible"
    assert len(r.log) == 4


def test_holistic_argument_errors():
    model, stack, _, _ = _instance(0)
    with pytest.raises(ValueError):
        holistic_pursuit(model, stack.x, [6])
    with pytest.raises(ValueError):
        holistic_pursuit(model, stack.x, [6], eta=1.0, sigma=1.0)
    with pytest.raises(ValueError):
        holistic_pursuit(model, stack.x, [6, 1], eta=1.0)
    with pytest.raises(ValueError):
        holistic_pursuit(model, stack.x, [6], eta=1.0, eta_schedule="sometimes")


def test_unknown_cosparsity_variant_noiseless():
    model, stack, _, _ = _instance(3)
    r = holistic_pursuit_unknown(model, stack.x, total_cosparsity=6, sigma=0.0)
    true_cs = set(stack.pattern(1e-9).cosupports[0])
    assert set(r.cosupports[0]) == true_cs
    np.testing.assert_allclose(r.gammas[-1], stack.gammas[-1], atol=1e-6)
    with pytest.raises(ValueError):
        holistic_pursuit_unknown(model, stack.x, sigma=0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.05, 0.95))
def test_step_succeeds_under_perturbation_bound(seed, frac):
    # unit-norm rows of the propagation matrix, as the bound assumes
    r = np.random.default_rng(seed)
    n, m1, m2, s, ell = 20, 30, 20, 9, 5
    D2 = r.standard_normal((m1, m2))
    D2 /= np.linalg.norm(D2, axis=1, keepdims=True)
    model = MultiLayerModel((r.standard_normal((n, m1)), D2))
    cfg = SamplerConfig((n, m1, m2), s, (ell,))
    stack, con = sample_signal(model, cfg, r)
    cos = list(con.cosupports[0])
    already = int(r.integers(0, ell))
    chosen = cos[:already]
    on = np.setdiff1d(np.arange(m1), cos)
    gmin = float(np.min(np.abs(stack.gammas[0][on])))
    mu_r = row_mutual_coherence(D2)
    bound = layer_score(gmin, mu_r, ell - already)
    # perturbation inside the subspace already enforced
    K, _ = kernel_basis(D2[chosen], ncols=m2)
    e = K @ r.standard_normal(K.shape[1])
    e *= frac * bound / np.linalg.norm(e)
    j = next_cosupport_row(D2, stack.gammas[-1] + e, chosen)
    assert j in cos and j not in chosen
