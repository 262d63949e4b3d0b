"""Finite entropy-regularized MDPs, linear reward features and policies.

Policies, reward tables and weight vectors are plain numpy arrays:
``pi[s, a]``, ``r[s, a]`` and ``w[i]``. The two structured objects are
:class:`Mdp` and :class:`FeatureMap`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-12
BALL_TOL = 1e-9


class InvalidArgumentError(ValueError):
    pass


class MdpValidationError(InvalidArgumentError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid MDP: " + "; ".join(self.problems))


def _frozen(x, dtype=float):
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mdp:
    """Tabular MDP ``(S, A, P, nu0, gamma, tau)``.

    ``transition[s, a, s']`` is ``P(s'|s, a)``. Construction only checks
    shapes; use :func:`validate_mdp` for the probabilistic invariants.
    """

    transition: np.ndarray
    initial_dist: np.ndarray
    discount: float
    temperature: float

    def __post_init__(self):
        P = _frozen(self.transition)
        nu0 = _frozen(self.initial_dist)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvalidArgumentError(f"transition must have shape (S, A, S), got {P.shape}")
        if nu0.shape != (P.shape[0],):
            raise InvalidArgumentError(
                f"initial_dist must have shape ({P.shape[0]},), got {nu0.shape}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "initial_dist", nu0)
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "temperature", float(self.temperature))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def gamma(self) -> float:
        return self.discount

    @property
    def tau(self) -> float:
        return self.temperature


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Features ``phi(s, a)`` in ``R^k`` stored as ``values[s, a, i]``."""

    values: np.ndarray
    sup_norm: float = field(init=False)

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim != 3:
            raise InvalidArgumentError(f"feature values must have shape (S, A, k), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("feature values must be finite")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "sup_norm", float(np.max(np.abs(vals))) if vals.size else 0.0)

    @property
    def k(self) -> int:
        return self.values.shape[2]

    @classmethod
    def one_hot_state_action(cls, n_states, n_actions):
        k = n_states * n_actions
        return cls(np.eye(k).reshape(n_states, n_actions, k))

    @classmethod
    def one_hot_state(cls, n_states, n_actions):
        vals = np.repeat(np.eye(n_states)[:, None, :], n_actions, axis=1)
        return cls(vals)

    @classmethod
    def constant(cls, n_states, n_actions, value=1.0):
        return cls(np.full((n_states, n_actions, 1), float(value)))


def validate_mdp(m: Mdp) -> list[str]:
    """Return a list of violated invariants; empty when ``m`` is well formed."""
    problems = []
    P, nu0 = m.transition, m.initial_dist
    if not np.all(np.isfinite(P)):
        problems.append("transition has non-finite entries")
    else:
        for s, a in zip(*np.nonzero(np.any(P < 0, axis=2))):
            problems.append(f"transition row (s={s}, a={a}) has negative entries")
        sums = P.sum(axis=2)
        for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > PROB_TOL)):
            problems.append(
                f"transition row (s={s}, a={a}) sums to {sums[s, a]!r} "
                f"(deficit {1.0 - sums[s, a]:.3g})")
    if not np.all(np.isfinite(nu0)):
        problems.append("initial_dist has non-finite entries")
    else:
        if np.any(nu0 < 0):
            problems.append("initial_dist has negative entries")
        if abs(nu0.sum() - 1.0) > PROB_TOL:
            problems.append(f"initial_dist sums to {nu0.sum()!r} (deficit {1.0 - nu0.sum():.3g})")
    if not 0.0 < m.discount < 1.0:
        problems.append(f"discount gamma={m.discount} out of range (0, 1)")
    if not m.temperature > 0.0:
        problems.append(f"temperature tau={m.temperature} must be positive")
    return problems


def check_mdp(m: Mdp) -> Mdp:
    problems = validate_mdp(m)
    if problems:
        raise MdpValidationError(problems)
    return m


def check_policy(pi, n_states=None, n_actions=None, tol=PROB_TOL) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 2:
        raise InvalidArgumentError(f"policy must be a 2-d table, got shape {pi.shape}")
    if n_states is not None and pi.shape != (n_states, n_actions):
        raise InvalidArgumentError(
            f"policy shape {pi.shape} does not match MDP ({n_states}, {n_actions})")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > tol):
        raise InvalidArgumentError("policy rows must be probability vectors")
    return pi


def uniform_policy(n_states, n_actions) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def in_weight_ball(w, tol=BALL_TOL) -> bool:
    return bool(np.abs(np.asarray(w, dtype=float)).sum() <= 1.0 + tol)


def reward_of(w, phi: FeatureMap) -> np.ndarray:
    """Linear reward ``r(s, a) = <w, phi(s, a)>``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (phi.k,):
        raise InvalidArgumentError(f"weight dimension {w.shape} does not match k={phi.k}")
    return phi.values @ w


def shannon_entropy(dist, tol=PROB_TOL) -> float:
    """Entropy in nats with ``0 log 0 = 0``."""
    p = np.asarray(dist, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise InvalidArgumentError("entropy requires a probability vector")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def row_entropy(pi) -> np.ndarray:
    """Per-state entropy of a policy table, no validation."""
    pi = np.asarray(pi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pi > 0, pi * np.log(np.where(pi > 0, pi, 1.0)), 0.0)
    return -terms.sum(axis=1)


def kl_rows(p, q) -> np.ndarray:
    """Per-state ``KL(p(.|s) || q(.|s))``; entries with ``p = 0`` contribute 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) - np.log(q)), 0.0)
    return terms.sum(axis=1)
