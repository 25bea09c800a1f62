"""Distributed projected saddle-point dynamics and their Euler discretization.

Every agent ``i`` holds an action ``x_i``, multipliers ``lambda_i >= 0`` for
its own constraints and one multiplier ``mu_ij >= 0`` per neighbor for the
proximity constraint ``||x_i - x_j||^2 - gamma <= 0``.  The flow descends the
Lagrangian in ``x`` and ascends it in the multipliers, all scaled by the gain
``epsilon``.  A step evaluates every field at the old state and then applies

    x_i      <- P_X(x_i + h * xdot_i)
    lambda_i <- max(0, lambda_i + h * lambdadot_i)
    mu_ij    <- max(0, mu_ij + h * mudot_ij)
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .graph import Graph, neighbors
from .problem import ProblemSpec

COUPLINGS = ("full", "local")


class EngineError(ValueError):
    pass


class HorizonExceeded(EngineError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, step_index: int, what: str):
        super().__init__(f"non-finite {what} after step {step_index}")
        self.step_index = step_index


@dataclass(frozen=True)
class SystemState:
    """Primal-dual state of the whole network at ``t = k * h``.

    ``mu`` follows the graph's directed slot order: ``mu[e]`` is owned by
    ``g.slot_src[e]`` and weighs its constraint towards ``g.slot_dst[e]``.
    """

    t: float
    x: np.ndarray  # (N, n)
    lam: np.ndarray  # (M,)
    mu: np.ndarray  # (E,) one per ordered neighbor pair
    k: int = 0

    # accessors used by the per-agent fields; an auditing subclass overrides them
    def action(self, j: int) -> np.ndarray:
        return self.x[j]

    def agent_lambda(self, i: int, p: ProblemSpec) -> np.ndarray:
        return self.lam[p.agent_rows(i)]

    def edge_mu(self, i: int, j: int, g: Graph) -> float:
        """``mu_ij``, the multiplier agent ``i`` keeps for neighbor ``j``."""
        lo, hi = g.slot_offsets[i], g.slot_offsets[i + 1]
        pos = lo + int(np.searchsorted(g.slot_dst[lo:hi], j))
        if pos >= hi or g.slot_dst[pos] != j:
            raise KeyError(f"{j} is not a neighbor of {i}")
        return float(self.mu[pos])


@dataclass(frozen=True)
class EngineConfig:
    epsilon: float = 1.0
    step: float = 0.02
    horizon: float = 10.0
    record_every: int = 1
    initial_x: np.ndarray | None = None
    initial_lambda: np.ndarray | None = None
    initial_mu: np.ndarray | None = None
    coupling: str = "full"
    keep_history: bool = False
    saturation_deltas: tuple = (0.001,)
    workers: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise EngineError("epsilon must be positive")
        if not self.step > 0:
            raise EngineError("step must be positive")
        if not self.horizon >= 0:
            raise EngineError("horizon must be nonnegative")
        k = round(self.horizon / self.step)
        if abs(k * self.step - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise EngineError("horizon must be an integer multiple of step")
        if int(self.record_every) < 1:
            raise EngineError("record_every must be a positive integer")
        if self.coupling not in COUPLINGS:
            raise EngineError(f"coupling must be one of {COUPLINGS}")
        if any(not d > 0 for d in self.saturation_deltas):
            raise EngineError("saturation deltas must be positive")
        if int(self.workers) < 1:
            raise EngineError("workers must be a positive integer")

    @property
    def step_count(self) -> int:
        return int(round(self.horizon / self.step))


def initial_state(p: ProblemSpec, g: Graph, cfg: EngineConfig) -> SystemState:
    N, n = p.agent_count, p.action_dim
    if cfg.initial_x is None:
        x = np.broadcast_to(p.action_set.project(np.zeros(n)), (N, n)).copy()
    else:
        x = np.array(cfg.initial_x, dtype=float).reshape(N, n)
        x = p.action_set.project(x)
    lam = np.zeros(p.constraint_total) if cfg.initial_lambda is None else np.array(
        cfg.initial_lambda, dtype=float
    ).reshape(p.constraint_total)
    mu = np.zeros(g.slot_count) if cfg.initial_mu is None else np.array(
        cfg.initial_mu, dtype=float
    ).reshape(g.slot_count)
    if np.any(lam < 0) or np.any(mu < 0):
        raise EngineError("initial multipliers must be nonnegative")
    return SystemState(0.0, x, lam, mu, 0)


# Lagrangians -----------------------------------------------------------------------

def proximity_constraint(x_i, x_j, gamma: float) -> float:
    x_i = np.asarray(x_i, dtype=float)
    x_j = np.asarray(x_j, dtype=float)
    if x_i.shape != x_j.shape:
        raise EngineError("proximity constraint needs points of equal dimension")
    d = x_i - x_j
    return float(d @ d) - gamma


def local_lagrangian(state: SystemState, p: ProblemSpec, g: Graph, i: int) -> float:
    x_i = state.action(i)
    X = np.zeros((p.agent_count, p.action_dim))
    X[i] = x_i
    value = float(p.own_costs(state.t, X, agents=[i])[0])
    lam_i = state.agent_lambda(i, p)
    if lam_i.size:
        value += float(lam_i @ p.own_constraint_values(state.t, X, agents=[i]))
    for j in neighbors(g, i):
        value += state.edge_mu(i, j, g) * proximity_constraint(x_i, state.action(j), p.gamma)
    return value


def lagrangian(p: ProblemSpec, g: Graph, t: float, x, lam, mu) -> float:
    """The network Lagrangian assembled directly from its definition."""
    x = np.asarray(x, dtype=float)
    value = float(p.own_costs(t, x).sum())
    if p.constraint_total:
        value += float(np.asarray(lam) @ p.own_constraint_values(t, x))
    d = x[g.slot_src] - x[g.slot_dst]
    value += float(np.asarray(mu) @ ((d * d).sum(axis=1) - p.gamma))
    return value


# per-agent fields (reference path, one-hop information only) --------------------------

def primal_field(
    state: SystemState, p: ProblemSpec, g: Graph, i: int, epsilon: float = 1.0, coupling: str = "full"
) -> np.ndarray:
    """``-epsilon`` times a subgradient of the Lagrangian in ``x_i``.

    ``coupling='full'`` weighs neighbor ``j`` by ``mu_ij + mu_ji`` (the partial
    of the network Lagrangian); ``'local'`` uses ``mu_ij`` alone.
    """
    x_i = state.action(i)
    X = np.zeros((p.agent_count, p.action_dim))
    X[i] = x_i
    grad = np.array(p.own_cost_subgradients(state.t, X, agents=[i])[0], dtype=float)
    lam_i = state.agent_lambda(i, p)
    if lam_i.size:
        jac = p.own_constraint_jacobians(state.t, X, agents=[i])
        for k in range(lam_i.size):
            grad += lam_i[k] * jac[k]
    for j in neighbors(g, i):
        w = state.edge_mu(i, j, g)
        if coupling == "full":
            w = w + state.edge_mu(j, i, g)
        grad += 2 * w * (x_i - state.action(j))
    return -epsilon * grad


def dual_fields(state: SystemState, p: ProblemSpec, g: Graph, i: int, epsilon: float = 1.0):
    """Unprojected multiplier rates: ``(lambda_rate, mu_rates)``, mu in neighbor order."""
    x_i = state.action(i)
    X = np.zeros((p.agent_count, p.action_dim))
    X[i] = x_i
    lam_rate = epsilon * p.own_constraint_values(state.t, X, agents=[i])
    mu_rates = np.array(
        [epsilon * proximity_constraint(x_i, state.action(j), p.gamma) for j in neighbors(g, i)]
    )
    return lam_rate, mu_rates


# vectorized fields (the hot loop) -------------------------------------------------------

def _chunk_fields(state: SystemState, p: ProblemSpec, g: Graph, cfg: EngineConfig, a: int, b: int):
    """Fields of agents ``a..b-1``; row results do not depend on the chunking."""
    X, t, eps = state.x, state.t, cfg.epsilon
    agents = np.arange(a, b)
    grad = np.array(p.own_cost_subgradients(t, X, agents=agents), dtype=float)
    r0, r1 = int(p.constraint_offsets[a]), int(p.constraint_offsets[b])
    if r1 > r0:
        jac = p.own_constraint_jacobians(t, X, agents=agents)
        fval = p.own_constraint_values(t, X, agents=agents)
        np.add.at(grad, p.constraint_owner[r0:r1] - a, state.lam[r0:r1, None] * jac)
        lam_rate = eps * fval
    else:
        lam_rate = np.empty(0)
    e0, e1 = int(g.slot_offsets[a]), int(g.slot_offsets[b])
    src, dst = g.slot_src[e0:e1], g.slot_dst[e0:e1]
    diff = X[src] - X[dst]
    w = state.mu[e0:e1]
    if cfg.coupling == "full":
        w = w + state.mu[g.slot_reverse[e0:e1]]
    np.add.at(grad, src - a, (2 * w)[:, None] * diff)
    mu_rate = eps * ((diff * diff).sum(axis=1) - p.gamma)
    return -eps * grad, lam_rate, mu_rate


def network_fields(state, p, g, cfg, pool=None, chunks=None):
    """All agents' ``(xdot, lambdadot, mudot)``, optionally split across a thread pool."""
    if pool is None or chunks is None or len(chunks) == 1:
        return _chunk_fields(state, p, g, cfg, 0, p.agent_count)
    parts = list(pool.map(lambda ab: _chunk_fields(state, p, g, cfg, *ab), chunks))
    return tuple(np.concatenate([part[q] for part in parts]) for q in range(3))


def step(state: SystemState, p: ProblemSpec, g: Graph, cfg: EngineConfig, _fields=None) -> SystemState:
    h = cfg.step
    if state.t + h > cfg.horizon + h / 2:
        raise HorizonExceeded(f"step from t={state.t} would pass the horizon {cfg.horizon}")
    dx, dlam, dmu = _fields if _fields is not None else network_fields(state, p, g, cfg)
    x = p.action_set.project(state.x + h * dx)
    lam = np.maximum(0.0, state.lam + h * dlam)
    mu = np.maximum(0.0, state.mu + h * dmu)
    k = state.k + 1
    return SystemState(k * h, x, lam, mu, k)


def _chunks(count: int, workers: int):
    bounds = np.linspace(0, count, min(workers, count) + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def run(p: ProblemSpec, g: Graph, cfg: EngineConfig, state: SystemState | None = None):
    """Integrate over ``[0, T]`` and return the completed :class:`TrajectoryLog`."""
    from .metrics import Recorder

    if g.node_count != p.agent_count:
        raise EngineError(f"graph has {g.node_count} nodes but the problem has {p.agent_count} agents")
    if cfg.horizon > p.horizon + 1e-9 * max(1.0, p.horizon):
        raise EngineError(f"engine horizon {cfg.horizon} exceeds the problem horizon {p.horizon}")
    if abs(cfg.step - p.time_step) > 1e-12 * max(1.0, p.time_step):
        raise EngineError("engine step differs from the problem's sampling step")
    state = initial_state(p, g, cfg) if state is None else state
    rec = Recorder(p, g, cfg)
    rec.record(state)
    chunks = _chunks(p.agent_count, cfg.workers)
    pool = ThreadPoolExecutor(max_workers=len(chunks)) if len(chunks) > 1 else None
    try:
        for k in range(cfg.step_count):
            rec.accumulate(state)
            fields = network_fields(state, p, g, cfg, pool, chunks)
            state = step(state, p, g, cfg, _fields=fields)
            if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.lam))
                    and np.all(np.isfinite(state.mu))):
                raise NonFiniteError(k, "state")
            if state.k % cfg.record_every == 0 or state.k == cfg.step_count:
                rec.record(state)
    finally:
        if pool is not None:
            pool.shutdown()
    return rec.finish(state)
