import math

import numpy as np
import pytest
from scipy.optimize import root

from softirl.environments import one_state_mdp, random_mdp
from softirl.mdp import FeatureMap, InvalidArgumentError, Mdp, kl_rows, uniform_policy
from softirl.solver import (SolverError, distribution_mismatch, feature_expectation_exact,
                            objective_value, occupancy, optimal_policy, optimal_value,
                            policy_evaluation, soft_suboptimality, soft_value_iteration,
                            truncated_feature_expectation)

V_ONE_STATE = (1 + math.log(2)) / 0.1       # 16.931471805599454
Q_ONE_STATE = 1 + 0.9 * V_ONE_STATE         # 16.23832462503951
KL_09_UNIFORM = 0.9 * math.log(1.8) + 0.1 * math.log(0.2)


def rand_policy(rng, nS, nA):
    return rng.dirichlet(np.ones(nA), size=nS)


def loop_bellman_residual(v, P, r, gamma, tau):
    """Soft Bellman residual with explicit loops, independent of the solver."""
    nS, nA = r.shape
    out = np.empty(nS)
    for s in range(nS):
        qs = [r[s, a] + gamma * sum(P[s, a, t] * v[t] for t in range(nS)) for a in range(nA)]
        mx = max(qs)
        out[s] = mx + tau * math.log(sum(math.exp((q - mx) / tau) for q in qs)) - v[s]
    return out


def test_one_state_closed_form():
    m = one_state_mdp().mdp
    vp = soft_value_iteration(m, np.ones((1, 2)))
    assert vp.v[0] == pytest.approx(V_ONE_STATE, abs=1e-8)
    np.testing.assert_allclose(vp.q, [[Q_ONE_STATE, Q_ONE_STATE]], atol=1e-8)
    assert vp.residual <= 1e-10


def test_zero_reward_value_is_entropy_only():
    env = random_mdp(4, 3, seed=1, gamma=0.8, tau=0.7)
    vp = soft_value_iteration(env.mdp, np.zeros((4, 3)))
    np.testing.assert_allclose(vp.v, 0.7 * math.log(3) / 0.2, atol=1e-8)


def test_value_iteration_matches_root_finder():
    env = random_mdp(4, 2, seed=7, gamma=0.9, tau=0.5)
    m = env.mdp
    r = np.random.default_rng(7).uniform(-1, 1, (4, 2))
    sol = root(loop_bellman_residual, np.zeros(4), args=(m.transition, r, m.gamma, m.tau),
               tol=1e-13)
    assert sol.success
    assert np.max(np.abs(loop_bellman_residual(sol.x, m.transition, r, m.gamma, m.tau))) < 1e-11
    vp = soft_value_iteration(m, r)
    np.testing.assert_allclose(vp.v, sol.x, atol=1e-8)


def test_optimal_pair_consistency():
    env = random_mdp(5, 3, seed=3, tau=0.4)
    vp = soft_value_iteration(env.mdp, np.random.default_rng(3).normal(size=(5, 3)))
    q = vp.q / 0.4
    lse = 0.4 * (q.max(axis=1) + np.log(np.exp(q - q.max(axis=1, keepdims=True)).sum(axis=1)))
    np.testing.assert_allclose(vp.v, lse, atol=1e-9)


def test_contraction_envelope():
    env = random_mdp(5, 2, seed=11, gamma=0.85)
    with pytest.raises(SolverError) as err:
        soft_value_iteration(env.mdp, np.ones((5, 2)), tol=1e-300, max_iter=60)
    res = np.array(err.value.residuals)
    assert len(res) == 60
    assert np.all(res[1:] <= 0.85 * res[:-1] + 1e-13)


def test_small_temperature_rejected():
    m = Mdp(np.ones((1, 2, 1)), [1.0], 0.9, 1e-8)
    with pytest.raises(InvalidArgumentError):
        soft_value_iteration(m, np.zeros((1, 2)))


def test_optimal_policy_examples():
    np.testing.assert_allclose(optimal_policy(np.full((2, 3), 4.2), 0.3), np.full((2, 3), 1 / 3))
    tau = 0.7
    np.testing.assert_allclose(optimal_policy(np.array([[tau * math.log(2), 0.0]]), tau),
                               [[2 / 3, 1 / 3]], atol=1e-15)
    q = np.random.default_rng(0).normal(size=(4, 3))
    shifted = q + np.array([[1e3], [-5.0], [0.0], [7e2]])
    np.testing.assert_allclose(optimal_policy(shifted, 0.05), optimal_policy(q, 0.05), atol=1e-12)


def test_policy_evaluation_one_state():
    m = one_state_mdp().mdp
    vp = policy_evaluation(m, np.ones((1, 2)), uniform_policy(1, 2))
    np.testing.assert_allclose(vp.q, Q_ONE_STATE, atol=1e-8)


def test_policy_evaluation_of_optimal_policy():
    env = random_mdp(4, 3, seed=5)
    r = np.random.default_rng(5).normal(size=(4, 3))
    tol = 1e-10
    vstar = soft_value_iteration(env.mdp, r, tol)
    vp = policy_evaluation(env.mdp, r, optimal_policy(vstar, env.mdp.tau), tol)
    # both solutions are within gamma/(1-gamma) * tol of the fixed point
    assert np.max(np.abs(vp.q - vstar.q)) <= 2 * tol / (1 - env.mdp.gamma)


def test_policy_evaluation_matches_linear_solve():
    env = random_mdp(5, 3, seed=9, gamma=0.9, tau=0.6)
    m = env.mdp
    rng = np.random.default_rng(9)
    r, pi = rng.normal(size=(5, 3)), rand_policy(rng, 5, 3)
    P_pi = np.einsum("sa,sat->st", pi, m.transition)
    ent = -np.sum(pi * np.log(pi), axis=1)
    v_lin = np.linalg.solve(np.eye(5) - m.gamma * P_pi, np.sum(pi * r, axis=1) + m.tau * ent)
    vp = policy_evaluation(m, r, pi)
    np.testing.assert_allclose(vp.v, v_lin, atol=1e-8)
    with np.errstate(divide="ignore"):
        np.testing.assert_allclose(vp.v, np.sum(pi * (vp.q - m.tau * np.log(pi)), axis=1), atol=1e-9)


def test_occupancy_one_state():
    occ = occupancy(one_state_mdp().mdp, uniform_policy(1, 2))
    np.testing.assert_allclose(occ.nu, [1.0])
    np.testing.assert_allclose(occ.mu, [[0.5, 0.5]])


def test_occupancy_point_mass_lower_bound():
    env = random_mdp(5, 2, seed=4, nu0_floor=0.0, gamma=0.7)
    nu0 = np.zeros(5)
    nu0[2] = 1.0
    m = Mdp(env.mdp.transition, nu0, 0.7, 1.0)
    pi = rand_policy(np.random.default_rng(4), 5, 2)
    assert occupancy(m, pi).nu[2] >= 0.3 - 1e-12


def test_occupancy_matches_truncated_series():
    env = random_mdp(6, 3, seed=12, gamma=0.9)
    m = env.mdp
    pi = rand_policy(np.random.default_rng(12), 6, 3)
    P_pi = np.einsum("sa,sat->st", pi, m.transition)
    d, series = m.initial_dist.copy(), np.zeros(6)
    for h in range(500):
        series += m.gamma ** h * d
        d = d @ P_pi
    series /= series.sum()
    occ = occupancy(m, pi)
    np.testing.assert_allclose(occ.nu, series, atol=1e-8)
    assert occ.nu.sum() == pytest.approx(1.0, abs=1e-9)
    assert occ.mu.sum() == pytest.approx(1.0, abs=1e-9)
    flow = m.gamma * np.einsum("sat,sa->t", m.transition, occ.mu) + (1 - m.gamma) * m.initial_dist
    np.testing.assert_allclose(occ.nu, flow, atol=1e-9)


def test_feature_expectation_examples():
    env = one_state_mdp()
    assert feature_expectation_exact(env.mdp, env.pi_expert, env.phi)[0] == pytest.approx(10.0)
    rnd = random_mdp(3, 2, seed=2)
    pi = rand_policy(np.random.default_rng(2), 3, 2)
    sigma = feature_expectation_exact(rnd.mdp, pi, rnd.phi)
    np.testing.assert_allclose(sigma, occupancy(rnd.mdp, pi).mu.ravel() / (1 - rnd.mdp.gamma))
    det = np.array([[0.0, 1.0]])
    assert feature_expectation_exact(env.mdp, det, env.phi)[0] == pytest.approx(
        feature_expectation_exact(env.mdp, env.pi_expert, env.phi)[0], abs=1e-12)


def test_truncated_feature_expectation_converges():
    env = random_mdp(4, 2, seed=6)
    full = feature_expectation_exact(env.mdp, env.pi_expert, env.phi)
    np.testing.assert_allclose(
        truncated_feature_expectation(env.mdp, env.pi_expert, env.phi, 400), full, atol=1e-12)
    assert truncated_feature_expectation(env.mdp, env.pi_expert, env.phi, 1).sum() == \
        pytest.approx(1.0)


def test_objective_value_examples():
    m = one_state_mdp().mdp
    assert objective_value(m, np.ones((1, 2)), uniform_policy(1, 2)) == pytest.approx(V_ONE_STATE)
    env = random_mdp(4, 3, seed=8, tau=0.3)
    assert objective_value(env.mdp, np.zeros((4, 3)), uniform_policy(4, 3)) == pytest.approx(
        0.3 * math.log(3) / (1 - env.mdp.gamma))
    r = np.random.default_rng(8).normal(size=(4, 3))
    vp = soft_value_iteration(env.mdp, r)
    j_star = objective_value(env.mdp, r, optimal_policy(vp, env.mdp.tau))
    assert j_star == pytest.approx(float(env.mdp.initial_dist @ vp.v), abs=1e-8)


def test_objective_zero_probability_actions():
    m = one_state_mdp().mdp
    assert objective_value(m, np.ones((1, 2)), np.array([[1.0, 0.0]])) == pytest.approx(10.0)


def test_soft_suboptimality_examples():
    env = random_mdp(4, 2, seed=10)
    r = np.random.default_rng(10).normal(size=(4, 2))
    pi_star = optimal_policy(soft_value_iteration(env.mdp, r), env.mdp.tau)
    gap, kl = soft_suboptimality(env.mdp, r, pi_star)
    assert abs(gap) < 1e-8 and abs(kl) < 1e-8

    m = one_state_mdp().mdp
    gap, kl = soft_suboptimality(m, np.zeros((1, 2)), np.array([[0.9, 0.1]]))
    assert gap == pytest.approx(10 * KL_09_UNIFORM, abs=1e-8)
    assert kl == pytest.approx(10 * KL_09_UNIFORM, abs=1e-8)

    pi = rand_policy(np.random.default_rng(11), 4, 2)
    gap, kl = soft_suboptimality(env.mdp, r, pi)
    assert abs(gap - kl) < 1e-7


def test_distribution_mismatch():
    env = random_mdp(5, 2, seed=13)
    rng = np.random.default_rng(13)
    pi, ref = rand_policy(rng, 5, 2), rand_policy(rng, 5, 2)
    assert distribution_mismatch(env.mdp, pi, pi) == pytest.approx(1.0)
    one = one_state_mdp().mdp
    assert distribution_mismatch(one, [[0.2, 0.8]], [[1.0, 0.0]]) == pytest.approx(1.0)
    bound = 1 / ((1 - env.mdp.gamma) * env.mdp.initial_dist.min())
    assert distribution_mismatch(env.mdp, pi, ref) <= bound


def test_distribution_mismatch_starved_state():
    P = np.zeros((2, 1, 2))
    P[:, 0, 0] = 1.0
    m = Mdp(P, [1.0, 0.0], 0.9, 1.0)
    with pytest.raises(InvalidArgumentError, match="state 1"):
        distribution_mismatch(m, [[1.0], [1.0]], [[1.0], [1.0]])


def test_optimal_value_helper():
    env = one_state_mdp()
    assert optimal_value(env.mdp, np.ones((1, 2))) == pytest.approx(V_ONE_STATE, abs=1e-8)


def test_kl_rows_zero_convention():
    np.testing.assert_allclose(kl_rows([[1.0, 0.0]], [[0.5, 0.5]]), [math.log(2)])


def test_feature_lipschitz_dense_features():
    env = random_mdp(4, 3, seed=21, gamma=0.8)
    rng = np.random.default_rng(21)
    phi = FeatureMap(rng.uniform(-2, 2, (4, 3, 5)))
    for _ in range(20):
        p1, p2 = rand_policy(rng, 4, 3), rand_policy(rng, 4, 3)
        lhs = np.max(np.abs(feature_expectation_exact(env.mdp, p1, phi)
                            - feature_expectation_exact(env.mdp, p2, phi)))
        tv = np.max(0.5 * np.abs(p1 - p2).sum(axis=1))
        assert lhs <= 2 * phi.sup_norm / 0.2 ** 2 * tv + 1e-9
