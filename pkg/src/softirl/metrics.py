"""Policy and reward comparison quantities."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .mdp import InvalidArgumentError, Mdp
from .solver import objective_value, occupancy, optimal_policy, soft_value_iteration

PINSKER_SLACK = 1e-8


def tv_metric(pi1, pi2) -> float:
    """``max_s 0.5 * ||pi1(.|s) - pi2(.|s)||_1``."""
    pi1 = np.asarray(pi1, dtype=float)
    pi2 = np.asarray(pi2, dtype=float)
    if pi1.shape != pi2.shape:
        raise InvalidArgumentError(f"policy shapes differ: {pi1.shape} vs {pi2.shape}")
    return float(np.max(0.5 * np.abs(pi1 - pi2).sum(axis=1)))


def ipm(sigma1, sigma2) -> float:
    """Maximum of ``<w, sigma1 - sigma2>`` over the unit L1 ball, i.e. the sup norm."""
    sigma1 = np.asarray(sigma1, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if sigma1.shape != sigma2.shape:
        raise InvalidArgumentError(f"dimension mismatch: {sigma1.shape} vs {sigma2.shape}")
    return float(np.max(np.abs(sigma1 - sigma2)))


def true_reward_gap(w_true, sigma_pi, sigma_e) -> float:
    w_true = np.asarray(w_true, dtype=float)
    diff = np.asarray(sigma_pi, dtype=float) - np.asarray(sigma_e, dtype=float)
    if w_true.shape != diff.shape:
        raise InvalidArgumentError("w_true and feature expectations differ in dimension")
    return float(w_true @ diff)


def expert_suboptimality(m: Mdp, r, pi_e) -> float:
    """``J*_r - J^{pi_e}_r``."""
    v_star = soft_value_iteration(m, r).v
    return float(m.initial_dist @ v_star) - objective_value(m, r, pi_e)


@dataclass
class MetricReport:
    expert_subopt: float
    tv: float
    ipm: float | None = None
    true_gap: float | None = None
    pinsker_lhs: float = float("nan")
    pinsker_rhs: float = float("nan")
    vartheta_e: float = float("nan")
    assumption_ok: bool = True
    pinsker_ok: bool = True

    def as_row(self) -> dict:
        return asdict(self)


def pinsker_chain(m: Mdp, r, pi_e) -> MetricReport:
    """Compare ``2 tau vartheta_E / (1 - gamma) * TV(pi_e, pi*_r)^2`` with the expert's
    soft suboptimality. A state the expert never visits is flagged, not raised.
    """
    pi_star = optimal_policy(soft_value_iteration(m, r), m.tau)
    nu_e = occupancy(m, pi_e).nu
    vartheta = float(nu_e.min())
    tv = tv_metric(pi_e, pi_star)
    rhs = expert_suboptimality(m, r, pi_e)
    lhs = 2.0 * m.tau * vartheta / (1.0 - m.gamma) * tv ** 2
    ok = vartheta > 0.0
    return MetricReport(
        expert_subopt=rhs, tv=tv, pinsker_lhs=lhs, pinsker_rhs=rhs, vartheta_e=vartheta,
        assumption_ok=ok, pinsker_ok=lhs <= rhs + PINSKER_SLACK,
    )
