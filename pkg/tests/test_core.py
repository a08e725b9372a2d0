import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from bgmp.baselines import exact_posterior_oracle, smmse
from bgmp.core import (BGMPConfig, MessageState, Priors, bernoulli_llr, bernoulli_prob, finalize,
                       initialize, llr_from_prob, prob_from_llr, run_bgmp, sum_node_update,
                       variable_node_update)
from bgmp.errors import InvalidArgument, NumericalFailure
from bgmp.graph import build_graph
from bgmp.harness import block_instance


def _random_edge_inputs(rng, n):
    return dict(residual=rng.normal(0, 2, n), eta_var=rng.uniform(0.2, 3, n),
                coef=rng.choice([-1, 1], n) * rng.uniform(0.3, 2, n),
                e_in=rng.normal(0, 1.5, n), v_in=rng.uniform(0.05, 4, n))


# ------------------------------------------------------------ LLR helpers


def test_llr_prob_symmetry_points():
    assert llr_from_prob(0.5) == 0.0
    assert prob_from_llr(0.0) == 0.5


def test_logistic_form():
    ell = np.linspace(-25, 25, 1001)
    np.testing.assert_allclose(prob_from_llr(ell), 1 / (1 + np.exp(-ell)), rtol=1e-12, atol=1e-15)


@settings(max_examples=200)
@given(st.floats(1e-6, 1 - 1e-6))
def test_llr_round_trip(p):
    assert abs(float(prob_from_llr(llr_from_prob(p))) - p) < 1e-12


def test_probability_clamps():
    assert 0 < llr_from_prob(1.0) and np.isfinite(llr_from_prob(1.0))
    assert np.isfinite(llr_from_prob(0.0))
    assert prob_from_llr(1e6) == prob_from_llr(30.0)


# ------------------------------------------------------------ sum node


def test_sum_llr_matches_gaussian_density_difference(rng):
    inp = _random_edge_inputs(rng, 10_000)
    got = bernoulli_llr(**inp)
    r, v, h, e, w = inp["residual"], inp["eta_var"], inp["coef"], inp["e_in"], inp["v_in"]
    # y - E = r, so compare densities of r under both hypotheses
    oracle = (norm.logpdf(r, loc=h * e, scale=np.sqrt(h**2 * w + v))
              - norm.logpdf(r, loc=0.0, scale=np.sqrt(v)))
    np.testing.assert_allclose(got, oracle, rtol=1e-8, atol=1e-12)


def test_sum_prob_form_matches_llr_form(rng):
    inp = _random_edge_inputs(rng, 10_000)
    np.testing.assert_allclose(bernoulli_prob(**inp), prob_from_llr(bernoulli_llr(**inp), None),
                               rtol=1e-8, atol=1e-14)


def test_single_neighbor_sum_node():
    g = build_graph(np.array([[0.5]]))
    state = initialize(g)
    state.v2s_precision[:] = 1.0
    sum_node_update(g, np.array([2.0]), np.array([1.0]), state)
    assert state.s2v_mean[0] == pytest.approx(4.0)
    assert state.s2v_variance[0] == pytest.approx(4.0)


def test_zero_variance_input_gives_zero_llr():
    assert bernoulli_llr(1.3, 0.7, 0.9, 0.0, 0.0) == 0.0


def test_first_pass_after_init(rng):
    h = rng.normal(size=(6, 4))
    g = build_graph(h)
    state = initialize(g)
    assert np.all(state.v2s_precision == 0)
    y = rng.normal(size=6)
    sum_node_update(g, y, np.full(6, 0.1), state)
    # zero means -> empty interference mean, so e_{i->k} = y_i / h_ik
    np.testing.assert_allclose(state.s2v_mean, y[g.rows] / g.coef)
    assert np.all(np.isfinite(state.s2v_variance)) and np.all(np.isfinite(state.s2v_llr))


def test_variance_floor_without_noise():
    g = build_graph(np.array([[1.0]]))
    state = sum_node_update(g, np.array([0.3]), np.array([0.0]), initialize(g))
    assert state.s2v_variance[0] > 0 and np.isfinite(state.s2v_llr[0])


# ------------------------------------------------------------ variable node


def test_precision_weighted_combine():
    g = build_graph(np.array([[1.0], [1.0]]))
    priors = Priors(np.zeros(1), np.full(1, 2.0), np.full(1, 0.3))
    state = MessageState(1, np.zeros(2), np.zeros(2), np.zeros(2),
                         s2v_mean=np.array([1.0, 1.0]), s2v_variance=np.array([1.0, 1.0]),
                         s2v_llr=np.array([1.0, 0.5]))
    variable_node_update(g, priors, state)
    # edge 0 excludes itself and sees only edge 1's message
    v_out = 1 / state.v2s_precision[0]
    assert v_out == pytest.approx(2 / 3)
    assert state.v2s_precision_mean[0] * v_out == pytest.approx(2 / 3)


def test_additive_llrs():
    g = build_graph(np.ones((3, 1)))
    priors = Priors.from_rho(1, 0.3)
    assert priors.llr[0] == pytest.approx(-0.84730, abs=1e-5)
    state = MessageState(1, np.zeros(3), np.zeros(3), np.zeros(3), s2v_mean=np.zeros(3),
                         s2v_variance=np.ones(3), s2v_llr=np.array([9.0, 1.0, 0.5]))
    variable_node_update(g, priors, state)
    assert state.v2s_llr[0] == pytest.approx(0.65270, abs=1e-5)


def test_variable_llr_matches_probability_product_oracle(rng):
    # 100 x 100 complete graph -> 10^4 edge messages
    h = np.ones((100, 100))
    g = build_graph(h)
    priors = Priors(np.zeros(100), np.ones(100), rng.uniform(0.05, 0.95, 100))
    s2v_p = rng.uniform(0.35, 0.65, g.num_edges)
    state = MessageState(1, np.zeros(g.num_edges), np.zeros(g.num_edges), np.zeros(g.num_edges),
                         s2v_mean=np.zeros(g.num_edges), s2v_variance=np.ones(g.num_edges),
                         s2v_llr=np.log(s2v_p / (1 - s2v_p)))
    variable_node_update(g, priors, state, BGMPConfig(llr_clip=None))
    oracle = np.empty(g.num_edges)
    for k in range(100):
        edges = np.flatnonzero(g.cols == k)
        for e in edges:
            others = s2v_p[edges[edges != e]]
            pk = priors.prob[k]
            ratio = (1 - pk) * np.prod(1 - others) / (pk * np.prod(others))
            oracle[e] = 1 / (1 + ratio)
    np.testing.assert_allclose(prob_from_llr(state.v2s_llr, None), oracle, rtol=1e-10)


def test_output_variance_bounded_by_prior(rng):
    h = rng.normal(size=(20, 6)) * (rng.random((20, 6)) < 0.6)
    g = build_graph(h)
    priors = Priors.from_rho(6, 0.3)
    state = initialize(g)
    y = rng.normal(size=20)
    for _ in range(5):
        sum_node_update(g, y, np.full(20, 0.2), state)
        assert np.all(state.s2v_variance > 0)
        variable_node_update(g, priors, state)
        assert np.all(1 / state.v2s_precision <= 1 / 0.3 + 1e-12)


# ------------------------------------------------------------ finalize


def test_isolated_user_falls_back_to_prior():
    h = np.array([[1.0, 0.0], [0.5, 0.0]])
    res = run_bgmp(np.array([0.2, -0.1]), build_graph(h), np.full(2, 0.1), Priors.from_rho(2, 0.3))
    assert res.posterior_llr[1] == pytest.approx(np.log(0.3 / 0.7))
    assert res.lambda_hat[1] == 0 and res.x_hat[1] == 0
    assert res.posterior_variance[1] == pytest.approx(1 / 0.3)


def test_certain_activity_limit():
    g = build_graph(np.ones((3, 1)))
    state = MessageState(1, np.zeros(3), np.zeros(3), np.zeros(3), s2v_mean=np.full(3, 1.2),
                         s2v_variance=np.full(3, 0.01), s2v_llr=np.full(3, 30.0))
    res = finalize(g, Priors.from_rho(1, 0.3), state)
    assert res.lambda_hat[0] == 1
    assert res.posterior_prob[0] > 1 - 1e-12
    assert res.x_hat[0] == pytest.approx(res.posterior_mean[0], rel=1e-12)


def test_finalize_needs_a_sum_pass():
    g = build_graph(np.ones((2, 2)))
    with pytest.raises(InvalidArgument):
        finalize(g, Priors.from_rho(2, 0.3), initialize(g))


def test_extrinsic_plus_own_equals_full(rng):
    h = rng.normal(size=(15, 5)) * (rng.random((15, 5)) < 0.7)
    g = build_graph(h)
    priors = Priors.from_rho(5, 0.3)
    state = initialize(g)
    y = rng.normal(size=15)
    cfg = BGMPConfig(llr_clip=None)
    for _ in range(3):
        sum_node_update(g, y, np.full(15, 0.3), state, cfg)
        variable_node_update(g, priors, state, cfg)
    sum_node_update(g, y, np.full(15, 0.3), state, cfg)
    full = finalize(g, priors, state, cfg)
    own_prec = 1 / state.s2v_variance
    own_pm = state.s2v_mean * own_prec
    s2v_mean, s2v_var, s2v_llr = state.s2v_mean, state.s2v_variance, state.s2v_llr
    variable_node_update(g, priors, state, cfg)
    k = g.cols
    np.testing.assert_allclose(state.v2s_precision + own_prec, 1 / full.posterior_variance[k],
                               rtol=1e-10)
    np.testing.assert_allclose(state.v2s_precision_mean + own_pm,
                               full.posterior_mean[k] / full.posterior_variance[k],
                               rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(state.v2s_llr + s2v_llr, full.posterior_llr[k], rtol=1e-10,
                               atol=1e-10)


# ------------------------------------------------------------ full runs


def test_block_instance_matches_exact_posterior():
    for seed in range(10):
        h, x, lam, y = block_instance(6, 0.3, 0.2, seed=seed, isolated=1)
        eta = np.full(h.shape[0], 0.2)
        res = run_bgmp(y, build_graph(h), eta, Priors.from_rho(6, 0.3))
        exact = exact_posterior_oracle(h, y, eta, 0.3)
        np.testing.assert_allclose(res.posterior_prob, exact.prob_active, atol=1e-6)
        np.testing.assert_allclose(res.x_soft, exact.mean, atol=1e-6)
        assert res.converged


def test_noiseless_single_edge_recovers_signal():
    h, g_true = 0.8, -1.7
    res = run_bgmp(np.array([h * g_true]), build_graph(np.array([[h]])), np.array([1e-10]),
                   Priors.from_rho(1, 0.3))
    assert res.posterior_mean[0] == pytest.approx(g_true, rel=1e-6)
    assert res.posterior_prob[0] > 1 - 1e-9
    assert res.lambda_hat[0] == 1


def test_all_active_limit_reproduces_linear_mmse(rng):
    # rho -> 1: Gaussian message passing means equal the ridge solution at a fixed point
    rho = 1 - 1e-9
    h = rng.normal(size=(60, 8)) * (rng.random((60, 8)) < 0.6)
    eta = rng.uniform(0.5, 1.5, 60)
    y = h @ rng.normal(size=8) + np.sqrt(eta) * rng.normal(size=60)
    res = run_bgmp(y, build_graph(h), eta, Priors.from_rho(8, rho),
                   BGMPConfig(tau_max=500, tol=1e-13))
    np.testing.assert_allclose(res.posterior_mean, smmse(h, y, eta, rho), atol=1e-8)


def test_dual_domain_runs_agree(rng):
    for _ in range(5):
        h = rng.normal(size=(12, 5)) * (rng.random((12, 5)) < 0.6)
        eta = np.full(12, 0.5)
        y = h @ (rng.normal(size=5) * (rng.random(5) < 0.4)) + rng.normal(0, 0.7, 12)
        priors = Priors.from_rho(5, 0.3)
        a = run_bgmp(y, build_graph(h), eta, priors, BGMPConfig(tau_max=8, tol=0, llr_clip=None))
        b = run_bgmp(y, build_graph(h), eta, priors,
                     BGMPConfig(tau_max=8, tol=0, llr_clip=None, domain="probability"))
        np.testing.assert_allclose(a.posterior_prob, b.posterior_prob, rtol=1e-8, atol=1e-12)


def test_edge_update_counter(rng):
    h = rng.normal(size=(10, 6)) * (rng.random((10, 6)) < 0.5)
    g = build_graph(h)
    res = run_bgmp(rng.normal(size=10), g, np.full(10, 0.5), Priors.from_rho(6, 0.3),
                   BGMPConfig(tau_max=7, tol=0))
    assert res.iterations_used == 7
    assert res.edge_updates == 2 * g.num_edges * 7


def test_permutation_equivariance(rng):
    h = rng.normal(size=(16, 7)) * (rng.random((16, 7)) < 0.6)
    y = rng.normal(size=16)
    eta = np.full(16, 0.4)
    priors = Priors(np.zeros(7), rng.uniform(1, 3, 7), rng.uniform(0.2, 0.5, 7))
    perm = rng.permutation(7)
    cfg = BGMPConfig(tau_max=20, tol=0)
    a = run_bgmp(y, build_graph(h), eta, priors, cfg)
    b = run_bgmp(y, build_graph(h[:, perm]), eta, priors.permuted(perm), cfg)
    np.testing.assert_allclose(b.posterior_prob, a.posterior_prob[perm], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(b.posterior_mean, a.posterior_mean[perm], rtol=1e-9, atol=1e-12)
    assert np.array_equal(b.lambda_hat, a.lambda_hat[perm])


def test_deterministic_results(rng):
    h = rng.normal(size=(16, 7)) * (rng.random((16, 7)) < 0.6)
    y = rng.normal(size=16)
    a = run_bgmp(y, build_graph(h), np.full(16, 0.4), Priors.from_rho(7, 0.3))
    b = run_bgmp(y, build_graph(h), np.full(16, 0.4), Priors.from_rho(7, 0.3))
    assert np.array_equal(a.x_hat, b.x_hat) and a.trajectory == b.trajectory or \
        np.isnan(a.trajectory[0]["max_dp"])  # nan != nan on the first record
    assert np.array_equal(a.posterior_llr, b.posterior_llr)


def test_hard_estimate_mode(rng):
    h = rng.normal(size=(8, 3))
    y = rng.normal(size=8)
    soft = run_bgmp(y, build_graph(h), np.full(8, 0.2), Priors.from_rho(3, 0.3))
    hard = run_bgmp(y, build_graph(h), np.full(8, 0.2), Priors.from_rho(3, 0.3),
                    BGMPConfig(estimate="hard"))
    np.testing.assert_array_equal(hard.x_hat, soft.lambda_hat * soft.posterior_mean)
    assert np.all(soft.x_hat[soft.lambda_hat == 0] == 0)


def test_truth_trajectory_and_callback(rng):
    h = rng.normal(size=(8, 3))
    x = np.array([1.0, 0.0, -0.5])
    y = h @ x
    seen = []
    res = run_bgmp(y, build_graph(h), np.full(8, 0.01), Priors.from_rho(3, 0.3),
                   truth=(x, (x != 0).astype(int)), on_iteration=seen.append)
    assert seen == res.trajectory
    assert {"iteration", "max_dp", "max_de", "mse", "use"} <= set(seen[-1])
    assert len(seen) == res.iterations_used


def test_non_finite_message_is_reported():
    h = np.ones((2, 2))
    with pytest.raises(NumericalFailure, match="iteration 1, edge"):
        run_bgmp(np.array([np.nan, 0.0]), build_graph(h), np.ones(2), Priors.from_rho(2, 0.3))


def test_bad_config_and_shapes():
    g = build_graph(np.ones((2, 2)))
    with pytest.raises(InvalidArgument):
        run_bgmp(np.zeros(3), g, np.ones(3), Priors.from_rho(2, 0.3))
    with pytest.raises(InvalidArgument):
        run_bgmp(np.zeros(2), g, np.ones(2), Priors.from_rho(2, 0.3), BGMPConfig(estimate="x"))


def test_prior_initialisation_option(rng):
    g = build_graph(rng.normal(size=(5, 3)))
    priors = Priors.from_rho(3, 0.3)
    state = initialize(g, priors, "prior")
    np.testing.assert_allclose(1 / state.v2s_precision, 1 / 0.3)
    np.testing.assert_allclose(state.v2s_llr, np.log(0.3 / 0.7))
