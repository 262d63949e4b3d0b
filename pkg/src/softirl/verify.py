"""Randomized property suites checking estimators and value identities
against the exact solvers.

Each suite returns one :class:`Check` per trial. ``margin`` is the distance
to failure (``bound - value``); a check passes when ``margin >= -slack``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environments import one_state_mdp, random_mdp
from .mdp import FeatureMap, kl_rows, uniform_policy
from .metrics import ipm, pinsker_chain, tv_metric
from .sampling import (GenerativeModel, RngStream, generate_expert_dataset,
                       empirical_expert_features, q_samples, sample_geometric_horizon,
                       sigma_samples)
from .solver import (advantage, feature_expectation_exact, objective_value, occupancy,
                     optimal_policy, optimal_value, policy_evaluation, soft_suboptimality,
                     soft_value_iteration, truncated_feature_expectation)

IDENTITY_TOL = 1e-7
BOUND_SLACK = 1e-9
N_SE = 4.0
MC_DRAWS = 10_000


@dataclass
class Check:
    suite: str
    trial: int
    instance_seed: int
    value: float
    bound: float
    slack: float
    detail: str = ""

    @property
    def margin(self) -> float:
        return self.bound - self.value

    @property
    def passed(self) -> bool:
        return bool(self.margin >= -self.slack)


def instance_seed(seed, trial) -> int:
    return seed * 100_003 + trial


def _random_instance(iseed, max_states=6, max_actions=3):
    rng = np.random.default_rng(iseed)
    nS = int(rng.integers(1, max_states + 1))
    nA = int(rng.integers(2, max_actions + 1))
    gamma = float(rng.uniform(0.5, 0.95))
    tau = float(rng.uniform(0.1, 2.0))
    env = random_mdp(nS, nA, seed=iseed, gamma=gamma, tau=tau)
    return env, rng


def _random_policy(rng, nS, nA, concentration=1.0):
    pi = rng.dirichlet(np.full(nA, concentration), size=nS)
    return pi / pi.sum(axis=1, keepdims=True)


def _random_reward(rng, nS, nA):
    return rng.uniform(-1.0, 1.0, size=(nS, nA))


def suite_soft_subopt(trials, seed):
    out = []
    for t in range(trials):
        iseed = instance_seed(seed, t)
        env, rng = _random_instance(iseed)
        m = env.mdp
        pi = _random_policy(rng, m.n_states, m.n_actions)
        gap, kl_form = soft_suboptimality(m, _random_reward(rng, m.n_states, m.n_actions), pi)
        out.append(Check("soft-subopt", t, iseed, abs(gap - kl_form), IDENTITY_TOL, 0.0,
                         f"gap={gap!r} kl_form={kl_form!r}"))
    return out


def suite_perf_diff(trials, seed):
    out = []
    for t in range(trials):
        iseed = instance_seed(seed, t)
        env, rng = _random_instance(iseed)
        m = env.mdp
        nS, nA = m.n_states, m.n_actions
        r = _random_reward(rng, nS, nA)
        pi, pi2 = _random_policy(rng, nS, nA), _random_policy(rng, nS, nA)
        lhs = objective_value(m, r, pi) - objective_value(m, r, pi2)
        occ = occupancy(m, pi)
        adv = advantage(policy_evaluation(m, r, pi2, tol=1e-12), pi2, m.tau)
        rhs = (np.sum(occ.mu * adv) - m.tau * occ.nu @ kl_rows(pi, pi2)) / (1.0 - m.gamma)
        out.append(Check("perf-diff", t, iseed, abs(lhs - rhs), IDENTITY_TOL, 0.0,
                         f"lhs={lhs!r} rhs={rhs!r}"))
    return out


def suite_perf_improvement(trials, seed):
    """Exact soft policy iteration step: ``J(pi+) - J(pi) = tau/(1-g) E_{nu+} KL(pi || pi+)``."""
    out = []
    for t in range(trials):
        iseed = instance_seed(seed, t)
        env, rng = _random_instance(iseed)
        m = env.mdp
        r = _random_reward(rng, m.n_states, m.n_actions)
        pi = _random_policy(rng, m.n_states, m.n_actions)
        pi_next = optimal_policy(policy_evaluation(m, r, pi, tol=1e-12), m.tau)
        lhs = objective_value(m, r, pi_next) - objective_value(m, r, pi)
        rhs = m.tau / (1.0 - m.gamma) * occupancy(m, pi_next).nu @ kl_rows(pi, pi_next)
        out.append(Check("perf-improvement", t, iseed, abs(lhs - rhs), IDENTITY_TOL, 0.0,
                         f"lhs={lhs!r} rhs={rhs!r}"))
    return out


def suite_subopt_gap(trials, seed):
    """``J* - J(pi) <= tau/(1-g) E_{nu*} KL(pi || pi+)`` for an exact policy-iteration step."""
    out = []
    for t in range(trials):
        iseed = instance_seed(seed, t)
        env, rng = _random_instance(iseed)
        m = env.mdp
        r = _random_reward(rng, m.n_states, m.n_actions)
        pi = _random_policy(rng, m.n_states, m.n_actions)
        pi_next = optimal_policy(policy_evaluation(m, r, pi, tol=1e-12), m.tau)
        vp = soft_value_iteration(m, r, tol=1e-12)
        pi_star = optimal_policy(vp, m.tau)
        gap = float(m.initial_dist @ vp.v) - objective_value(m, r, pi)
        bound = m.tau / (1.0 - m.gamma) * occupancy(m, pi_star).nu @ kl_rows(pi, pi_next)
        out.append(Check("subopt-gap", t, iseed, gap, float(bound), BOUND_SLACK))
    return out


def suite_reward_lipschitz(trials, seed):
    out = []
    for t in range(trials):
        iseed = instance_seed(seed, t)
        env, rng = _random_instance(iseed)
        m = env.mdp
        nS, nA = m.n_states, m.n_actions
        r1, r2 = _random_reward(rng, nS, nA), _random_reward(rng, nS, nA)
        pi = _random_policy(rng, nS, nA)
        bound = np.max(np.abs(r1 - r2)) / (1.0 - m.gamma)
        diff = max(abs(objective_value(m, r1, pi) - objective_value(m, r2, pi)),
                   abs(optimal_value(m, r1) - optimal_value(m, r2)))
        out.append(Check("reward-lipschitz", t, iseed, diff, float(bound), BOUND_SLACK))
    return out


def suite_occupancy_lipschitz(trials, seed):
    out = []
    for t in range(trials):
        iseed = instance_seed(seed, t)
        env, rng = _random_instance(iseed)
        m = env.mdp
        pi1 = _random_policy(rng, m.n_states, m.n_actions)
        pi2 = _random_policy(rng, m.n_states, m.n_actions)
        lhs = np.abs(occupancy(m, pi1).mu - occupancy(m, pi2).mu).sum()
        bound = np.max(np.abs(pi1 - pi2).sum(axis=1)) / (1.0 - m.gamma)
        out.append(Check("occupancy-lipschitz", t, iseed, float(lhs), float(bound), BOUND_SLACK))
    return out


def _dense_features(rng, nS, nA, k=3):
    return FeatureMap(rng.uniform(-1.0, 1.0, size=(nS, nA, k)))


def suite_feature_lipschitz(trials, seed):
    """``ipm(sigma1, sigma2) = ||sigma1 - sigma2||_inf <= 2||phi||/(1-g)^2 * TV``."""
    out = []
    for t in range(trials):
        iseed = instance_seed(seed, t)
        env, rng = _random_instance(iseed)
        m = env.mdp
        phi = _dense_features(rng, m.n_states, m.n_actions)
        pi1 = _random_policy(rng, m.n_states, m.n_actions)
        pi2 = _random_policy(rng, m.n_states, m.n_actions)
        lhs = ipm(feature_expectation_exact(m, pi1, phi), feature_expectation_exact(m, pi2, phi))
        bound = 2.0 * phi.sup_norm / (1.0 - m.gamma) ** 2 * tv_metric(pi1, pi2)
        out.append(Check("feature-lipschitz", t, iseed, lhs, bound, BOUND_SLACK))
    return out


def suite_pinsker(trials, seed):
    out = []
    for t in range(trials):
        iseed = instance_seed(seed, t)
        env, rng = _random_instance(iseed)
        m = env.mdp
        pi_e = _random_policy(rng, m.n_states, m.n_actions)
        rep = pinsker_chain(m, _random_reward(rng, m.n_states, m.n_actions), pi_e)
        out.append(Check("pinsker", t, iseed, rep.pinsker_lhs, rep.pinsker_rhs, 1e-8,
                         f"vartheta_e={rep.vartheta_e!r}"))
    return out


def counterexample_values(gamma=0.9, tau=1.0):
    """ipm and tv between the uniform expert and the deterministic ``a_2`` policy."""
    env = one_state_mdp(gamma, tau)
    pi = np.array([[0.0, 1.0]])
    s_pi = feature_expectation_exact(env.mdp, pi, env.phi)
    s_e = feature_expectation_exact(env.mdp, env.pi_expert, env.phi)
    return ipm(s_pi, s_e), tv_metric(env.pi_expert, pi)


def suite_counterexample(trials, seed):
    d, tv = counterexample_values()
    return [Check("counterexample", 0, 0, d, 0.0, 1e-12, f"ipm={d!r}"),
            Check("counterexample", 1, 0, abs(tv - 0.5), 0.0, 0.0, f"tv={tv!r}")]


def _mc_instance(seed, t):
    """Trial 0 is the one-state MDP; later trials are random 5x3 MDPs."""
    if t == 0:
        env = one_state_mdp()
        return env, uniform_policy(1, 2), np.ones((1, 2)), 0
    iseed = instance_seed(seed, t)
    env = random_mdp(5, 3, seed=iseed)
    rng = np.random.default_rng(iseed + 1)
    return env, _random_policy(rng, 5, 3), _random_reward(rng, 5, 3), iseed


def _z(samples, exact):
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(len(samples))
    diff = np.abs(mean - exact)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff > 1e-12, np.inf, 0.0))


def suite_unbiased_q(trials, seed, draws=MC_DRAWS):
    out = []
    for t in range(trials):
        env, pi, r, iseed = _mc_instance(seed, t)
        m = env.mdp
        q = policy_evaluation(m, r, pi, tol=1e-12).q
        model = GenerativeModel(m)
        stream = RngStream(seed).child("unbiased-q", t)
        worst = 0.0
        for s in range(m.n_states):
            for a in range(m.n_actions):
                xs = q_samples(s, a, pi, r, draws, model, stream)
                worst = max(worst, float(_z(xs[:, None], q[s, a])[0]))
        out.append(Check("unbiased-q", t, iseed, worst, N_SE, 0.0, "value is max |z| over (s, a)"))
    return out


def suite_unbiased_sigma(trials, seed, draws=MC_DRAWS):
    out = []
    for t in range(trials):
        env, pi, _, iseed = _mc_instance(seed, t)
        m = env.mdp
        exact = feature_expectation_exact(m, pi, env.phi)
        xs = sigma_samples(pi, env.phi, draws, GenerativeModel(m),
                           RngStream(seed).child("unbiased-sigma", t))
        worst = float(np.max(_z(xs, exact)))
        out.append(Check("unbiased-sigma", t, iseed, worst, N_SE, 0.0,
                         "value is max |z| over coordinates"))
    return out


def suite_gradient_bound(trials, seed, draws=MC_DRAWS):
    """Single-draw reward gradient moments against their analytic bounds.

    Two checks per trial: the mean sup norm and the mean squared 2-norm,
    each compared with its bound after adding 4 standard errors.
    """
    out = []
    for t in range(trials):
        env, pi, _, iseed = _mc_instance(seed, t)
        m, phi = env.mdp, env.phi
        model = GenerativeModel(m)
        stream = RngStream(seed).child("gradient-bound", t)
        sig = sigma_samples(pi, phi, draws, model, stream)
        data = generate_expert_dataset(model, env.pi_expert, draws, 20, stream)
        disc = m.gamma ** np.arange(data.horizon)
        expert = np.einsum("h,nhk->nk", disc, phi.values[data.states, data.actions])
        g = sig - expert
        scale = phi.sup_norm / (1.0 - m.gamma)
        for label, vals, bound in (
                ("linf", np.max(np.abs(g), axis=1), 2.0 * scale),
                ("l2sq", np.sum(g ** 2, axis=1), 6.0 * phi.k * scale ** 2)):
            lower = vals.mean() - N_SE * vals.std(ddof=1) / math.sqrt(len(vals))
            out.append(Check("gradient-bound", t, iseed, float(lower), float(bound), 0.0, label))
    return out


def suite_geometric_moments(trials, seed, draws=100_000):
    out = []
    for t in range(trials):
        gamma = [0.5, 0.9, 0.3, 0.75][t % 4]
        h = sample_geometric_horizon(RngStream(seed).child("geom", t), gamma, draws).astype(float)
        first = gamma / (1 - gamma)
        second = (gamma + gamma ** 2) / (1 - gamma) ** 2
        z1 = abs(h.mean() - first) / (h.std(ddof=1) / math.sqrt(draws))
        z2 = abs((h ** 2).mean() - second) / ((h ** 2).std(ddof=1) / math.sqrt(draws))
        out.append(Check("geometric-moments", t, t, float(max(z1, z2)), N_SE, 0.0,
                         f"gamma={gamma}"))
    return out


def suite_truncation_bias(trials, seed):
    """Exact mean of the empirical expert features sits within the truncation bound."""
    out = []
    for t in range(trials):
        iseed = instance_seed(seed, t)
        env, rng = _random_instance(iseed)
        m, phi = env.mdp, env.phi
        horizon = int(rng.integers(1, 30))
        exact = feature_expectation_exact(m, env.pi_expert, phi)
        trunc = truncated_feature_expectation(m, env.pi_expert, phi, horizon)
        w = rng.standard_normal(phi.k)
        w /= np.abs(w).sum()
        slack = m.gamma ** horizon * phi.sup_norm / (1.0 - m.gamma)
        out.append(Check("truncation-bias", t, iseed, float(w @ exact - slack), float(w @ trunc),
                         BOUND_SLACK, f"H={horizon}"))
    return out


SUITES = {
    "soft-subopt": suite_soft_subopt,
    "perf-diff": suite_perf_diff,
    "perf-improvement": suite_perf_improvement,
    "subopt-gap": suite_subopt_gap,
    "reward-lipschitz": suite_reward_lipschitz,
    "occupancy-lipschitz": suite_occupancy_lipschitz,
    "feature-lipschitz": suite_feature_lipschitz,
    "pinsker": suite_pinsker,
    "counterexample": suite_counterexample,
    "unbiased-q": suite_unbiased_q,
    "unbiased-sigma": suite_unbiased_sigma,
    "gradient-bound": suite_gradient_bound,
    "geometric-moments": suite_geometric_moments,
    "truncation-bias": suite_truncation_bias,
}

LEMMA_SUITES = ("soft-subopt", "perf-diff", "perf-improvement", "subopt-gap",
                "reward-lipschitz", "occupancy-lipschitz", "feature-lipschitz", "pinsker",
                "truncation-bias")
# Monte Carlo suites are run with fewer trials under "all".
MC_SUITES = ("unbiased-q", "unbiased-sigma", "gradient-bound", "geometric-moments")


def resolve_suites(selector: str):
    if selector == "all":
        return list(SUITES)
    if selector == "lemmas":
        return list(LEMMA_SUITES)
    names = [s.strip() for s in selector.split(",") if s.strip()]
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)}, 'lemmas' or 'all'")
    return names


def run_suites(names, trials, seed, mc_trials=None):
    checks = []
    for name in names:
        n = trials
        if name in MC_SUITES and mc_trials is not None:
            n = min(trials, mc_trials)
        checks.extend(SUITES[name](n, seed))
    return checks
