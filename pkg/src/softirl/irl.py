"""Single-loop primal-dual IRL: stochastic soft policy iteration for the
policy player, projected stochastic gradient descent for the reward player.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from .mdp import FeatureMap, InvalidArgumentError, uniform_policy
from .sampling import GenerativeModel, RngStream, est_q_table, est_sigma

STEPSIZE_VARIANTS = ("default", "regret")


def project_l1_ball(v, radius=1.0) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{y : ||y||_1 <= radius}``.

    Sort-based soft thresholding: find ``theta`` with
    ``sum_i max(|v_i| - theta, 0) = radius`` and shrink every coordinate by it.
    """
    if radius <= 0:
        raise InvalidArgumentError("radius must be positive")
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("cannot project a vector with non-finite entries")
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, len(u) + 1)
    rho = np.nonzero(u * j > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


def policy_update(q_hat, tau) -> np.ndarray:
    """``pi(.|s) ∝ exp(q_hat(s, .) / tau)``."""
    return softmax(np.asarray(q_hat, dtype=float) / tau, axis=1)


def reward_step(w, sigma_pi_hat, sigma_e_hat, eta_w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    sigma_pi_hat = np.asarray(sigma_pi_hat, dtype=float)
    sigma_e_hat = np.asarray(sigma_e_hat, dtype=float)
    if not w.shape == sigma_pi_hat.shape == sigma_e_hat.shape:
        raise InvalidArgumentError(f"shape mismatch: w {w.shape}, sigma_pi {sigma_pi_hat.shape}, "
                                   f"sigma_e {sigma_e_hat.shape}")
    g = sigma_pi_hat - sigma_e_hat
    if eta_w <= 0:
        raise InvalidArgumentError("eta_w must be positive")
    return project_l1_ball(w - eta_w * g, 1.0)


def default_stepsize(k, T, gamma, phi_sup, variant="default") -> float:
    """``(1 - gamma) / (sqrt(kT) ||phi||_inf)``; ``variant="regret"`` uses ``sqrt(2kT)``."""
    if phi_sup <= 0:
        raise InvalidArgumentError("feature sup-norm must be positive")
    if k < 1 or T < 1 or not 0 < gamma < 1:
        raise InvalidArgumentError("need k >= 1, T >= 1 and 0 < gamma < 1")
    if variant not in STEPSIZE_VARIANTS:
        raise InvalidArgumentError(f"unknown stepsize variant {variant!r}")
    scale = k * T * (2 if variant == "regret" else 1)
    return (1.0 - gamma) / (math.sqrt(scale) * phi_sup)


@dataclass(frozen=True)
class IrlConfig:
    T: int
    B: int
    eta_w: float | str = "auto"
    seed: int = 0
    stepsize_variant: str = "default"
    snapshot_every: int | None = None
    horizon_cap: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.T < 1 or self.B < 1:
            raise InvalidArgumentError("T and B must be at least 1")
        if self.eta_w != "auto" and not (isinstance(self.eta_w, (int, float)) and self.eta_w > 0):
            raise InvalidArgumentError(f"eta_w must be 'auto' or a positive number, got {self.eta_w!r}")
        if self.stepsize_variant not in STEPSIZE_VARIANTS:
            raise InvalidArgumentError(f"unknown stepsize variant {self.stepsize_variant!r}")
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise InvalidArgumentError("snapshot_every must be positive")
        if self.workers < 1:
            raise InvalidArgumentError("workers must be positive")

    @property
    def snapshot_cadence(self) -> int:
        return self.snapshot_every or max(1, math.ceil(self.T / 100))


@dataclass
class IrlTrace:
    """Per-iteration record of a run. Row ``t`` describes iterate ``t``."""

    eta_w: float
    weights: list = field(default_factory=list)
    sigma_hat: list = field(default_factory=list)
    grad_linf: list = field(default_factory=list)
    samples_total: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    policies: dict = field(default_factory=dict)
    w_final: np.ndarray | None = None
    pi_final: np.ndarray | None = None

    @property
    def T(self) -> int:
        return len(self.weights)

    @property
    def w_bar(self) -> np.ndarray:
        return np.mean(np.asarray(self.weights), axis=0)


class IrlAborted(RuntimeError):
    def __init__(self, message, trace):
        self.trace = trace
        super().__init__(message)


def run_irl(mdp, phi: FeatureMap, sigma_e_hat, cfg: IrlConfig,
            model: GenerativeModel | None = None) -> IrlTrace:
    """Run the primal-dual loop for ``cfg.T`` iterations.

    Only ``n_states``, ``n_actions``, ``gamma`` and ``tau`` are read from
    ``mdp``; all interaction with the dynamics goes through ``model``.
    """
    nS, nA, gamma, tau = mdp.n_states, mdp.n_actions, mdp.gamma, mdp.tau
    if model is None:
        model = GenerativeModel(mdp)
    sigma_e_hat = np.asarray(sigma_e_hat, dtype=float)
    if sigma_e_hat.shape != (phi.k,):
        raise InvalidArgumentError(f"expert feature vector must have shape ({phi.k},)")
    eta = cfg.eta_w
    if eta == "auto":
        eta = default_stepsize(phi.k, cfg.T, gamma, phi.sup_norm, cfg.stepsize_variant)
    trace = IrlTrace(eta_w=float(eta))
    root = RngStream(cfg.seed)
    w = np.zeros(phi.k)
    pi = uniform_policy(nS, nA)
    start_samples = model.samples
    cadence = cfg.snapshot_cadence
    t0 = time.perf_counter()
    try:
        for t in range(cfg.T):
            stream = root.child("iter", t)
            r = phi.values @ w
            q_hat = est_q_table(pi, r, cfg.B, model, stream, cfg.workers, cfg.horizon_cap)
            sig = est_sigma(pi, phi, cfg.B, model, stream, cfg.horizon_cap)
            grad = sig - sigma_e_hat
            trace.weights.append(w)
            trace.sigma_hat.append(sig)
            trace.grad_linf.append(float(np.max(np.abs(grad))))
            trace.samples_total.append(model.samples - start_samples)
            trace.wall_time.append(time.perf_counter() - t0)
            if t % cadence == 0 or t == cfg.T - 1:
                trace.policies[t] = pi
            pi = policy_update(q_hat, tau)
            w = reward_step(w, sig, sigma_e_hat, eta)
    except Exception as exc:
        raise IrlAborted(f"run aborted at iteration {len(trace.weights)}: {exc}", trace) from exc
    trace.w_final = w
    trace.pi_final = pi
    return trace
