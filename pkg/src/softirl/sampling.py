"""Generative-model access and Monte Carlo estimators with geometric horizons.

Every random draw comes from an :class:`RngStream` addressed by a label path,
e.g. ``stream.child("q", s, a)``. Results therefore do not depend on the order
in which pairs are processed or on how many worker threads share the work.
"""
from __future__ import annotations

import json
import logging
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .mdp import FeatureMap, InvalidArgumentError, Mdp, row_entropy

log = logging.getLogger(__name__)


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        if label < 0:
            raise InvalidArgumentError(f"integer stream labels must be non-negative, got {label}")
        return int(label)
    # Offset keeps string labels disjoint from small integer labels.
    return (1 << 32) + zlib.crc32(str(label).encode())


class RngStream:
    """Deterministic random stream derived from a seed and a label path."""

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        self._gen = None

    def child(self, *labels) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(_label_key(x) for x in labels))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def random(self, size=None):
        return self.generator.random(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


class GenerativeModel:
    """Simulator access to an MDP: initial-state draws and next-state draws.

    Callers supply the uniforms, so all randomness stays with the caller's
    stream. ``samples`` counts every state drawn (initial or transition).
    """

    def __init__(self, mdp: Mdp):
        self._cum_next = np.cumsum(mdp.transition, axis=2)
        self._cum_init = np.cumsum(mdp.initial_dist)
        self.n_states = mdp.n_states
        self.n_actions = mdp.n_actions
        self.gamma = mdp.gamma
        self.tau = mdp.tau
        self._lock = threading.Lock()
        self.samples = 0

    def _count(self, n):
        with self._lock:
            self.samples += int(n)

    def initial_states(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        self._count(u.size)
        idx = np.searchsorted(self._cum_init, u, side="right")
        return np.minimum(idx, self.n_states - 1)

    def next_states(self, states, actions, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        self._count(u.size)
        cum = self._cum_next[states, actions]
        idx = (cum <= u[:, None]).sum(axis=1)
        return np.minimum(idx, self.n_states - 1)


def sample_geometric_horizon(rng, gamma, size=None):
    """Inverse-CDF draw of ``H ~ Geom(1 - gamma)`` on ``{0, 1, 2, ...}``.

    ``H = 0`` exactly when the uniform falls below ``1 - gamma``.
    """
    if not 0.0 < gamma < 1.0:
        raise InvalidArgumentError(f"gamma must lie in (0, 1), got {gamma}")
    u = np.asarray(rng.random(size), dtype=float)
    h = np.floor(np.log1p(-u) / np.log(gamma)).astype(np.int64)
    return int(h) if size is None else h


def _categorical(cum_rows, u):
    idx = (cum_rows <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cum_rows.shape[1] - 1)


def _walk(model, cum_pi, s0, horizons, u_act, u_next, table=None, record=False):
    """Run ``len(s0)`` trajectories in lockstep, slot ``i`` for ``horizons[i] + 1`` steps.

    Step ``h`` draws its action with ``u_act[:, h]`` and, if the slot continues,
    its next state with ``u_next[:, h]``. ``table`` is summed over the visited
    pairs, one step at a time so the sums do not depend on batch padding.
    """
    n = len(s0)
    hmax = int(horizons.max()) if n else -1
    totals = None
    if table is not None:
        totals = np.zeros((n,) + table.shape[2:])
    if record:
        states = np.full((n, hmax + 1), -1, dtype=np.int64)
        actions = np.full((n, hmax + 1), -1, dtype=np.int64)
    s = np.array(s0, dtype=np.int64)
    idx = np.arange(n)
    for h in range(hmax + 1):
        a = _categorical(cum_pi[s], u_act[idx, h])
        if table is not None:
            totals[idx] += table[s, a]
        if record:
            states[idx, h] = s
            actions[idx, h] = a
        go = horizons[idx] > h
        if not go.any():
            break
        idx, s, a = idx[go], s[go], a[go]
        s = model.next_states(s, a, u_next[idx, h])
    if record:
        return totals, states, actions
    return totals


def _horizons(gen, gamma, size, cap):
    h = sample_geometric_horizon(gen, gamma, size)
    if cap is not None:
        h = np.minimum(h, cap)
    return h


def _warn_cap(cap):
    if cap is not None:
        log.warning("horizon cap %d truncates geometric horizons; estimates are biased", cap)


def _q_pair_draws(stream, s, a, batch, gamma, cap):
    gen = stream.child("q", s, a).generator
    h = _horizons(gen, gamma, batch, cap)
    u = gen.random((batch, int(h.max()) + 1, 2))
    return h, u


def _q_chunk(model, pairs, cum_pi, f, batch, stream, cap):
    hs, us = [], []
    for s, a in pairs:
        h, u = _q_pair_draws(stream, s, a, batch, model.gamma, cap)
        hs.append(h)
        us.append(u)
    width = max(u.shape[1] for u in us)
    u_all = np.zeros((len(pairs) * batch, width, 2))
    for i, u in enumerate(us):
        u_all[i * batch:(i + 1) * batch, :u.shape[1]] = u
    horizons = np.concatenate(hs)
    ps = np.repeat([p[0] for p in pairs], batch)
    pa = np.repeat([p[1] for p in pairs], batch)
    first = model.next_states(ps, pa, u_all[:, 0, 1])
    return _walk(model, cum_pi, first, horizons, u_all[:, :, 0], u_all[:, 1:, 1], table=f)


def _q_tail_table(pi, r, tau):
    return np.asarray(r, dtype=float) + tau * row_entropy(pi)[:, None]


def q_samples(s, a, pi, r, batch, model: GenerativeModel, stream: RngStream,
              horizon_cap=None) -> np.ndarray:
    """``batch`` independent single-trajectory value estimates at ``(s, a)``.

    Each is ``r(s, a) + gamma * sum_{h=0}^{H} (r(s_h, a_h) + tau H(pi(.|s_h)))``
    with ``s_0 ~ P(.|s, a)``, ``a_h ~ pi(.|s_h)`` and ``H ~ Geom(1 - gamma)``.
    """
    pi = np.asarray(pi, dtype=float)
    r = np.asarray(r, dtype=float)
    _warn_cap(horizon_cap)
    f = _q_tail_table(pi, r, model.tau)
    tails = _q_chunk(model, [(s, a)], np.cumsum(pi, axis=1), f, batch, stream, horizon_cap)
    return r[s, a] + model.gamma * tails


def est_q(s, a, pi, r, batch, model: GenerativeModel, stream: RngStream,
          horizon_cap=None) -> float:
    """Unbiased estimate of the soft ``Q^pi_r(s, a)`` from ``batch`` trajectories."""
    if batch < 1:
        raise InvalidArgumentError("batch size must be at least 1")
    return float(np.mean(q_samples(s, a, pi, r, batch, model, stream, horizon_cap)))


def est_q_table(pi, r, batch, model: GenerativeModel, stream: RngStream,
                workers=1, horizon_cap=None) -> np.ndarray:
    """:func:`est_q` for every ``(s, a)``, split over ``workers`` threads."""
    if batch < 1:
        raise InvalidArgumentError("batch size must be at least 1")
    pi = np.asarray(pi, dtype=float)
    r = np.asarray(r, dtype=float)
    _warn_cap(horizon_cap)
    nS, nA = r.shape
    f = _q_tail_table(pi, r, model.tau)
    cum_pi = np.cumsum(pi, axis=1)
    pairs = [(s, a) for s in range(nS) for a in range(nA)]
    chunks = [c.tolist() for c in np.array_split(np.arange(len(pairs)), max(1, workers)) if len(c)]
    jobs = [[pairs[i] for i in c] for c in chunks]

    def run(job):
        return _q_chunk(model, job, cum_pi, f, batch, stream, horizon_cap)

    if len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=len(jobs)) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    tails = np.concatenate(parts).reshape(len(pairs), batch)
    return r + model.gamma * tails.mean(axis=1).reshape(nS, nA)


def sigma_samples(pi, phi: FeatureMap, batch, model: GenerativeModel, stream: RngStream,
                  horizon_cap=None) -> np.ndarray:
    """``batch`` single-trajectory feature sums, shape ``(batch, k)``."""
    pi = np.asarray(pi, dtype=float)
    _warn_cap(horizon_cap)
    gen = stream.child("sigma").generator
    s0_u = gen.random(batch)
    h = _horizons(gen, model.gamma, batch, horizon_cap)
    u = gen.random((batch, int(h.max()) + 1, 2))
    s0 = model.initial_states(s0_u)
    return _walk(model, np.cumsum(pi, axis=1), s0, h, u[:, :, 0], u[:, :, 1], table=phi.values)


def est_sigma(pi, phi: FeatureMap, batch, model: GenerativeModel, stream: RngStream,
              horizon_cap=None) -> np.ndarray:
    """Unbiased estimate of the feature expectation ``sigma^pi``."""
    if batch < 1:
        raise InvalidArgumentError("batch size must be at least 1")
    return sigma_samples(pi, phi, batch, model, stream, horizon_cap).mean(axis=0)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray

    def __len__(self):
        return len(self.states)

    def pairs(self):
        return list(zip(self.states.tolist(), self.actions.tolist()))


def rollout(model: GenerativeModel, pi, horizon, stream: RngStream, start=None) -> Trajectory:
    """Single trajectory following ``pi``.

    With ``start=None`` it has ``horizon + 1`` pairs from ``s_0 ~ nu0``. With
    ``start=(s, a)`` it is ``(s, a)`` followed by ``horizon + 1`` pairs from
    the successor state, the layout consumed by the value estimator.
    """
    if horizon < 0:
        raise InvalidArgumentError("horizon must be non-negative")
    pi = np.asarray(pi, dtype=float)
    gen = stream.generator
    u = gen.random((1, horizon + 2, 2))
    h = np.array([horizon])
    if start is None:
        s0 = model.initial_states(u[:, 0, 1])
        head_s, head_a = [], []
    else:
        s, a = start
        s0 = model.next_states(np.array([s]), np.array([a]), u[:, 0, 1])
        head_s, head_a = [s], [a]
    _, st, ac = _walk(model, np.cumsum(pi, axis=1), s0, h, u[:, 1:, 0], u[:, 1:, 1], record=True)
    return Trajectory(np.array(head_s + st[0].tolist()), np.array(head_a + ac[0].tolist()))


@dataclass(frozen=True, eq=False)
class ExpertDataset:
    """``N`` expert trajectories of exactly ``H`` state-action pairs."""

    states: np.ndarray
    actions: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if self.states.shape != self.actions.shape or self.states.ndim != 2:
            raise InvalidArgumentError("states and actions must be equal-shape (N, H) arrays")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(json.dumps({"n": self.n, "horizon": self.horizon, "seed": self.seed}) + "\n")
            for st, ac in zip(self.states.tolist(), self.actions.tolist()):
                fh.write(json.dumps([[s, a] for s, a in zip(st, ac)]) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            header = json.loads(fh.readline())
            rows = [json.loads(line) for line in fh if line.strip()]
        if len(rows) != header["n"] or any(len(t) != header["horizon"] for t in rows):
            raise InvalidArgumentError(f"{path}: trajectory count or lengths disagree with header")
        arr = np.array(rows, dtype=np.int64).reshape(header["n"], header["horizon"], 2)
        return cls(arr[..., 0], arr[..., 1], header.get("seed"))


def generate_expert_dataset(model: GenerativeModel, pi_e, n, horizon, stream: RngStream,
                            seed=None) -> ExpertDataset:
    """``n`` trajectories of ``horizon`` pairs with ``s_0 ~ nu0`` and actions from ``pi_e``."""
    if n < 1 or horizon < 1:
        raise InvalidArgumentError("need n >= 1 and horizon >= 1")
    gen = stream.child("expert").generator
    s0 = model.initial_states(gen.random(n))
    u = gen.random((n, horizon, 2))
    h = np.full(n, horizon - 1)
    _, st, ac = _walk(model, np.cumsum(np.asarray(pi_e, dtype=float), axis=1), s0, h,
                      u[:, :, 0], u[:, :, 1], record=True)
    return ExpertDataset(st, ac, seed)


def empirical_expert_features(d: ExpertDataset, phi: FeatureMap, gamma) -> np.ndarray:
    """``(1/N) sum_i sum_{h<H} gamma^h phi(s_h^i, a_h^i)``."""
    disc = gamma ** np.arange(d.horizon)
    feats = phi.values[d.states, d.actions]
    return np.einsum("h,nhk->k", disc, feats) / d.n
