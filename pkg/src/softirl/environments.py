"""Test-bed environments with feature maps and ground-truth experts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import FeatureMap, InvalidArgumentError, Mdp, check_mdp, reward_of, uniform_policy
from .solver import optimal_policy, soft_value_iteration

# up, down, left, right as (row, col) offsets
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True, eq=False)
class EnvironmentBundle:
    mdp: Mdp
    phi: FeatureMap
    pi_expert: np.ndarray
    w_true: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def realizable(self) -> bool:
        return self.w_true is not None and self.provenance.get("expert_mix", 0.0) == 0.0


def soft_optimal_expert(m: Mdp, phi: FeatureMap, w, mix=0.0) -> np.ndarray:
    """Soft-optimal policy for ``r_w``, optionally mixed toward uniform by ``mix``."""
    if not 0.0 <= mix <= 1.0:
        raise InvalidArgumentError("expert mix must lie in [0, 1]")
    pi = optimal_policy(soft_value_iteration(m, reward_of(w, phi)), m.tau)
    if mix:
        pi = (1.0 - mix) * pi + mix * uniform_policy(m.n_states, m.n_actions)
    return pi


def one_state_mdp(gamma=0.9, tau=1.0) -> EnvironmentBundle:
    """Single state, two self-loop actions, constant scalar feature, uniform expert."""
    m = check_mdp(Mdp(np.ones((1, 2, 1)), np.ones(1), gamma, tau))
    return EnvironmentBundle(
        mdp=m,
        phi=FeatureMap.constant(1, 2),
        pi_expert=uniform_policy(1, 2),
        w_true=np.zeros(1),
        provenance={"name": "one_state", "gamma": gamma, "tau": tau},
    )


def random_mdp(n_states, n_actions, seed, gamma=0.9, tau=1.0, nu0_floor=None,
               expert_mix=0.0) -> EnvironmentBundle:
    """Random kernel with Dirichlet(1) rows and one-hot state-action features.

    ``nu0_floor`` defaults to ``0.5 / n_states``. ``w_true`` is a random point
    on the unit L1 sphere and the expert is soft-optimal for it.
    """
    if nu0_floor is None:
        nu0_floor = 0.5 / n_states
    if not 0.0 <= nu0_floor <= 1.0 / n_states:
        raise InvalidArgumentError(f"nu0_floor must lie in [0, 1/{n_states}]")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    nu0 = nu0_floor + (1.0 - n_states * nu0_floor) * rng.dirichlet(np.ones(n_states))
    nu0 /= nu0.sum()
    w = rng.standard_normal(n_states * n_actions)
    w /= np.abs(w).sum()
    m = check_mdp(Mdp(P, nu0, gamma, tau))
    phi = FeatureMap.one_hot_state_action(n_states, n_actions)
    return EnvironmentBundle(
        mdp=m, phi=phi, pi_expert=soft_optimal_expert(m, phi, w, expert_mix), w_true=w,
        provenance={"name": "random", "n_states": n_states, "n_actions": n_actions,
                    "seed": seed, "gamma": gamma, "tau": tau, "nu0_floor": nu0_floor,
                    "expert_mix": expert_mix},
    )


def gridworld(size=4, slip_prob=0.1, gamma=0.9, tau=0.1, goal=None,
              expert_mix=0.0) -> EnvironmentBundle:
    """``size x size`` grid with four moves, slips and a single rewarding goal cell.

    A move succeeds with probability ``1 - slip_prob``; otherwise the agent
    moves in a uniformly random direction. Moves off the grid stay put.
    Features are one-hot on states and ``w_true`` is the goal indicator.
    """
    if size < 2:
        raise InvalidArgumentError("gridworld size must be at least 2")
    if not 0.0 <= slip_prob < 1.0:
        raise InvalidArgumentError("slip_prob must lie in [0, 1)")
    n = size * size
    goal = n - 1 if goal is None else goal

    def target(s, move):
        row, col = divmod(s, size)
        dr, dc = move
        r2, c2 = row + dr, col + dc
        return r2 * size + c2 if 0 <= r2 < size and 0 <= c2 < size else s

    P = np.zeros((n, 4, n))
    for s in range(n):
        for a, move in enumerate(MOVES):
            P[s, a, target(s, move)] += 1.0 - slip_prob
            for other in MOVES:
                P[s, a, target(s, other)] += slip_prob / 4
    m = check_mdp(Mdp(P, np.full(n, 1.0 / n), gamma, tau))
    phi = FeatureMap.one_hot_state(n, 4)
    w = np.zeros(n)
    w[goal] = 1.0
    return EnvironmentBundle(
        mdp=m, phi=phi, pi_expert=soft_optimal_expert(m, phi, w, expert_mix), w_true=w,
        provenance={"name": "gridworld", "size": size, "slip_prob": slip_prob,
                    "gamma": gamma, "tau": tau, "goal": goal, "expert_mix": expert_mix},
    )


BUILDERS = {"one_state": one_state_mdp, "random": random_mdp, "gridworld": gridworld}


def build(name, **params) -> EnvironmentBundle:
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown environment {name!r}; choose from {sorted(BUILDERS)}") from None
    return builder(**params)
