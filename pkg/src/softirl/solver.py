"""Model-based soft dynamic programming.

These routines read the transition kernel directly. They build experts and
serve as ground truth for the sampling-based algorithm, which never calls
them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .mdp import InvalidArgumentError, Mdp, kl_rows, row_entropy

DEFAULT_TOL = 1e-10
MIN_TEMPERATURE = 1e-6
DIRECT_SOLVE_MAX_STATES = 2000


class SolverError(RuntimeError):
    def __init__(self, message, residuals=()):
        self.residuals = list(residuals)
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class ValuePair:
    v: np.ndarray
    q: np.ndarray
    residual: float
    iterations: int


@dataclass(frozen=True, eq=False)
class OccupancyPair:
    nu: np.ndarray
    mu: np.ndarray


def _check_tau(tau):
    if tau < MIN_TEMPERATURE:
        raise InvalidArgumentError(
            f"temperature {tau} below {MIN_TEMPERATURE}; unregularized solves are not supported")


def iteration_cap(gamma, tol, scale, margin=100):
    """Sweeps needed for a gamma-contraction started ``scale`` away to reach ``tol``."""
    scale = max(scale, tol)
    n = math.log(tol * (1.0 - gamma) / scale) / math.log(gamma)
    return max(int(math.ceil(n)), 0) + margin


def _backup(m: Mdp, r, v):
    return r + m.gamma * (m.transition @ v)


def soft_value_iteration(m: Mdp, r, tol=DEFAULT_TOL, max_iter=None) -> ValuePair:
    """Fixed point of ``V(s) = tau log sum_a exp(Q(s, a) / tau)``."""
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    tau = m.tau
    _check_tau(tau)
    r = np.asarray(r, dtype=float)
    if max_iter is None:
        scale = np.max(np.abs(r)) + tau * math.log(m.n_actions) + 1.0
        max_iter = iteration_cap(m.gamma, tol, scale / (1.0 - m.gamma))
    v = np.zeros(m.n_states)
    history = []
    for it in range(1, max_iter + 1):
        q = _backup(m, r, v)
        v_new = tau * logsumexp(q / tau, axis=1)
        res = float(np.max(np.abs(v_new - v)))
        history.append(res)
        v = v_new
        if res <= tol:
            return ValuePair(v=v, q=_backup(m, r, v), residual=res, iterations=it)
    raise SolverError(f"soft value iteration did not reach tol={tol} in {max_iter} sweeps", history)


def optimal_policy(q, tau) -> np.ndarray:
    """Row-wise softmax of ``Q / tau``; accepts a :class:`ValuePair` or a table."""
    q = q.q if isinstance(q, ValuePair) else np.asarray(q, dtype=float)
    return softmax(q / tau, axis=1)


def policy_evaluation(m: Mdp, r, pi, tol=DEFAULT_TOL, max_iter=None) -> ValuePair:
    """Soft ``Q^pi`` and ``V^pi`` by iterating the regularized evaluation operator."""
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    r = np.asarray(r, dtype=float)
    pi = np.asarray(pi, dtype=float)
    bonus = m.tau * row_entropy(pi)
    if max_iter is None:
        scale = np.max(np.abs(r)) + np.max(bonus, initial=0.0) + 1.0
        max_iter = iteration_cap(m.gamma, tol, scale / (1.0 - m.gamma))
    v = np.zeros(m.n_states)
    history = []
    for it in range(1, max_iter + 1):
        q = _backup(m, r, v)
        v_new = np.sum(pi * q, axis=1) + bonus
        res = float(np.max(np.abs(v_new - v)))
        history.append(res)
        v = v_new
        if res <= tol:
            return ValuePair(v=v, q=_backup(m, r, v), residual=res, iterations=it)
    raise SolverError(f"policy evaluation did not reach tol={tol} in {max_iter} sweeps", history)


def state_transition(m: Mdp, pi) -> np.ndarray:
    """``P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)``."""
    return np.einsum("sa,sat->st", pi, m.transition)


def occupancy(m: Mdp, pi, tol=1e-12) -> OccupancyPair:
    """Normalized discounted occupancy from the Bellman flow equations."""
    pi = np.asarray(pi, dtype=float)
    P_pi = state_transition(m, pi)
    rhs = (1.0 - m.gamma) * m.initial_dist
    n = m.n_states
    if n <= DIRECT_SOLVE_MAX_STATES:
        nu = np.linalg.solve(np.eye(n) - m.gamma * P_pi.T, rhs)
    else:
        nu = rhs.copy()
        for _ in range(iteration_cap(m.gamma, tol, 1.0)):
            nu_new = rhs + m.gamma * (P_pi.T @ nu)
            done = np.max(np.abs(nu_new - nu)) <= tol
            nu = nu_new
            if done:
                break
        else:
            raise SolverError("occupancy power iteration did not converge")
    nu = np.clip(nu, 0.0, None)
    return OccupancyPair(nu=nu, mu=nu[:, None] * pi)


def feature_expectation_exact(m: Mdp, pi, phi) -> np.ndarray:
    """``sigma^pi = E_pi[sum_h gamma^h phi(s_h, a_h)]``."""
    mu = occupancy(m, pi).mu
    return np.einsum("sa,sak->k", mu, phi.values) / (1.0 - m.gamma)


def truncated_feature_expectation(m: Mdp, pi, phi, horizon) -> np.ndarray:
    """Exact mean of the ``horizon``-step discounted feature sum.

    This is the expectation of the empirical expert feature estimate for
    datasets of length-``horizon`` trajectories.
    """
    P_pi = state_transition(m, pi)
    d = m.initial_dist.copy()
    total = np.zeros(phi.k)
    per_state = np.einsum("sa,sak->sk", pi, phi.values)
    disc = 1.0
    for _ in range(horizon):
        total += disc * (d @ per_state)
        d = d @ P_pi
        disc *= m.gamma
    return total


def objective_value(m: Mdp, r, pi) -> float:
    """``J^pi_r``: discounted reward plus ``tau`` times discounted causal entropy."""
    pi = np.asarray(pi, dtype=float)
    nu = occupancy(m, pi).nu
    per_state = np.sum(pi * np.asarray(r, dtype=float), axis=1) + m.tau * row_entropy(pi)
    return float(nu @ per_state / (1.0 - m.gamma))


def optimal_value(m: Mdp, r, tol=DEFAULT_TOL) -> float:
    """``J*_r`` as the ``nu0`` average of the soft-optimal value."""
    return float(m.initial_dist @ soft_value_iteration(m, r, tol).v)


def soft_suboptimality(m: Mdp, r, pi, tol=DEFAULT_TOL):
    """Return ``(J*_r - J^pi_r, tau/(1-gamma) E_{nu^pi} KL(pi || pi*_r))``."""
    vp = soft_value_iteration(m, r, tol)
    pi_star = optimal_policy(vp, m.tau)
    gap = float(m.initial_dist @ vp.v) - objective_value(m, r, pi)
    nu = occupancy(m, pi).nu
    kl_form = m.tau / (1.0 - m.gamma) * float(nu @ kl_rows(pi, pi_star))
    return gap, kl_form


def advantage(vp: ValuePair, pi, tau) -> np.ndarray:
    """``A(s, a) = Q(s, a) - V(s) - tau log pi(a|s)``."""
    with np.errstate(divide="ignore"):
        return vp.q - vp.v[:, None] - tau * np.log(pi)


def distribution_mismatch(m: Mdp, pi, pi_ref) -> float:
    """``max_s nu^{pi_ref}(s) / nu^{pi}(s)``."""
    nu = occupancy(m, pi).nu
    nu_ref = occupancy(m, pi_ref).nu
    starved = np.nonzero(nu <= 0.0)[0]
    if starved.size:
        raise InvalidArgumentError(
            f"state {int(starved[0])} has zero occupancy under the evaluated policy")
    return float(np.max(nu_ref / nu))
