"""Regret, fit, saturated fit, disagreement and energy along a trajectory.

All time integrals use the left-endpoint rectangle rule with the engine's
step ``h``: the integrand is sampled at the state *before* each Euler step.
The :class:`Recorder` is fed by :func:`saddlenet.dynamics.run` and produces
an immutable :class:`TrajectoryLog`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import EngineConfig, SystemState, lagrangian
from .graph import Graph, diameter
from .problem import ProblemSpec


class MetricError(ValueError):
    pass


class BoundHypothesisViolated(MetricError):
    pass


def pair_list(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def energy(state: SystemState, ref_x, ref_lambda, ref_mu) -> float:
    """Half the squared distance of the full primal-dual state to a reference."""
    ref_x = np.asarray(ref_x, dtype=float)
    ref_lambda = np.asarray(ref_lambda, dtype=float)
    ref_mu = np.asarray(ref_mu, dtype=float)
    if ref_x.shape != state.x.shape or ref_lambda.shape != state.lam.shape or ref_mu.shape != state.mu.shape:
        raise MetricError("reference shapes do not match the state")
    dx, dl, dm = state.x - ref_x, state.lam - ref_lambda, state.mu - ref_mu
    return 0.5 * float((dx * dx).sum() + dl @ dl + dm @ dm)


@dataclass(frozen=True)
class TrajectoryLog:
    """Sampled states plus running integrals at every recorded sample.

    Integral arrays carry a leading record axis ``R``: entry ``r`` holds the
    integral over ``[0, record_times[r]]``.
    """

    problem: ProblemSpec
    graph: Graph
    config: EngineConfig
    record_times: np.ndarray  # (R,)
    record_steps: np.ndarray  # (R,)
    states: tuple  # R SystemState snapshots
    fit: np.ndarray  # (R, N, M): trajectory agent i against constraint row r
    saturated: dict  # delta -> (R, N, M)
    total_cost: np.ndarray  # (R, N): integral of f0(t, x_i(t)) = sum_j f0j
    own_cost: np.ndarray  # (R, N): integral of f0i(t, x_i(t))
    disagreement: np.ndarray  # (R, P): integral of ||x_i - x_j||, pairs i < j
    disagreement_sq: np.ndarray  # (R, P)
    max_multiplier: np.ndarray  # (K+1,) per step
    slot_constraint: np.ndarray  # (E,): integral of g_ij(x(t))
    mu_integral: np.ndarray  # (E,): integral of mu_ij(t)
    lam_history: np.ndarray | None  # (K, M) multipliers at each left endpoint
    heldout_error: np.ndarray | None  # (R, N)

    @property
    def horizon(self) -> float:
        return float(self.record_times[-1])

    @property
    def step(self) -> float:
        return self.config.step

    @property
    def pairs(self):
        return pair_list(self.problem.agent_count)

    @property
    def initial(self) -> SystemState:
        return self.states[0]

    @property
    def final(self) -> SystemState:
        return self.states[-1]

    def pair_index(self, i: int, j: int) -> int:
        n = self.problem.agent_count
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise MetricError(f"invalid agent pair ({i}, {j})")
        a, b = min(i, j), max(i, j)
        return a * n - a * (a + 1) // 2 + (b - a - 1)

    def record_at(self, t: float) -> int:
        """Index of the record taken at time ``t``."""
        hits = np.flatnonzero(np.abs(self.record_times - t) <= 1e-9 * max(1.0, abs(t)))
        if hits.size == 0:
            raise MetricError(f"no record at t={t}; adjust record_every")
        return int(hits[0])

    def _checked(self, i: int) -> None:
        if len(self.states) == 0:
            raise MetricError("empty log")
        if not 0 <= i < self.problem.agent_count:
            raise MetricError(f"agent {i} out of range")


class Recorder:
    """Single-writer accumulator of every running integral."""

    def __init__(self, p: ProblemSpec, g: Graph, cfg: EngineConfig):
        self.p, self.g, self.cfg = p, g, cfg
        N, M, E = p.agent_count, p.constraint_total, g.slot_count
        self.pairs = np.array(pair_list(N), dtype=np.intp).reshape(-1, 2)
        self.fit = np.zeros((N, M))
        self.saturated = {float(d): np.zeros((N, M)) for d in cfg.saturation_deltas}
        self.total_cost = np.zeros(N)
        self.own_cost = np.zeros(N)
        self.dis = np.zeros(len(self.pairs))
        self.dis_sq = np.zeros(len(self.pairs))
        self.slot_g = np.zeros(E)
        self.mu_int = np.zeros(E)
        self.lam_hist = [] if cfg.keep_history else None
        self.max_mult = []
        self.snapshots = []
        self.holdout = getattr(p, "holdout", None)

    def accumulate(self, state: SystemState) -> None:
        p, h, X = self.p, self.cfg.step, state.x
        C = p.cost_matrix(state.t, X)
        self.total_cost += h * C.sum(axis=0)
        self.own_cost += h * np.diagonal(C)
        if p.constraint_total:
            F = p.constraint_matrix(state.t, X).T
            self.fit += h * F
            for delta, acc in self.saturated.items():
                acc += h * np.maximum(F, -delta)
        diff = X[:, None, :] - X[None, :, :]
        sq = (diff * diff).sum(axis=-1)
        if len(self.pairs):
            psq = sq[self.pairs[:, 0], self.pairs[:, 1]]
            self.dis += h * np.sqrt(psq)
            self.dis_sq += h * psq
        self.slot_g += h * (sq[self.g.slot_src, self.g.slot_dst] - p.gamma)
        self.mu_int += h * state.mu
        if self.lam_hist is not None:
            self.lam_hist.append(state.lam.copy())
        self.max_mult.append(_max_multiplier(state))

    def record(self, state: SystemState) -> None:
        err = None
        if self.holdout is not None:
            pred = np.sign(self.holdout.features @ state.x.T)
            err = (pred != self.holdout.labels[:, None]).mean(axis=0)
        self.snapshots.append(
            (
                state,
                self.fit.copy(),
                {d: a.copy() for d, a in self.saturated.items()},
                self.total_cost.copy(),
                self.own_cost.copy(),
                self.dis.copy(),
                self.dis_sq.copy(),
                err,
            )
        )

    def finish(self, state: SystemState) -> TrajectoryLog:
        snaps = self.snapshots
        if snaps[-1][0].k != state.k:
            self.record(state)
            snaps = self.snapshots
        self.max_mult.append(_max_multiplier(state))
        h = self.cfg.step
        N, M = self.p.agent_count, self.p.constraint_total
        lam_hist = None
        if self.lam_hist is not None:
            lam_hist = np.array(self.lam_hist).reshape(len(self.lam_hist), M)
        return TrajectoryLog(
            problem=self.p,
            graph=self.g,
            config=self.cfg,
            record_times=np.array([s[0].k * h for s in snaps]),
            record_steps=np.array([s[0].k for s in snaps]),
            states=tuple(s[0] for s in snaps),
            fit=np.array([s[1] for s in snaps]).reshape(len(snaps), N, M),
            saturated={d: np.array([s[2][d] for s in snaps]).reshape(len(snaps), N, M) for d in self.saturated},
            total_cost=np.array([s[3] for s in snaps]),
            own_cost=np.array([s[4] for s in snaps]),
            disagreement=np.array([s[5] for s in snaps]).reshape(len(snaps), -1),
            disagreement_sq=np.array([s[6] for s in snaps]).reshape(len(snaps), -1),
            max_multiplier=np.array(self.max_mult),
            slot_constraint=self.slot_g.copy(),
            mu_integral=self.mu_int.copy(),
            lam_history=lam_hist,
            heldout_error=None if snaps[0][7] is None else np.array([s[7] for s in snaps]),
        )


def replay(p: ProblemSpec, g: Graph, cfg: EngineConfig, xs, lam=None, mu=None) -> TrajectoryLog:
    """Log of a prescribed trajectory ``xs`` of shape ``(K+1, N, n)`` on the engine's grid.

    Multipliers default to zero.  No dynamics are run; every integral is
    accumulated exactly as :func:`saddlenet.dynamics.run` would.
    """
    xs = np.asarray(xs, dtype=float)
    K = cfg.step_count
    if xs.shape != (K + 1, p.agent_count, p.action_dim):
        raise MetricError(f"trajectory must have shape {(K + 1, p.agent_count, p.action_dim)}")
    lam = np.zeros((K + 1, p.constraint_total)) if lam is None else np.asarray(lam, float)
    mu = np.zeros((K + 1, g.slot_count)) if mu is None else np.asarray(mu, float)
    states = [SystemState(k * cfg.step, xs[k], lam[k], mu[k], k) for k in range(K + 1)]
    rec = Recorder(p, g, cfg)
    rec.record(states[0])
    for k in range(K):
        rec.accumulate(states[k])
        if (k + 1) % cfg.record_every == 0 or k + 1 == K:
            rec.record(states[k + 1])
    return rec.finish(states[-1])


def _max_multiplier(state: SystemState) -> float:
    parts = [np.abs(state.lam), np.abs(state.mu)]
    return float(max((a.max() for a in parts if a.size), default=0.0))


# benchmark-side integrals ------------------------------------------------------------------

def benchmark_cost_integral(p: ProblemSpec, xstar, step_count: int | None = None) -> np.ndarray:
    """Running ``integral f0(t, x*) dt`` at every step boundary, shape ``(K+1,)``."""
    times = p.sample_times() if step_count is None else np.arange(step_count) * p.time_step
    if len(times) == 0:
        return np.zeros(1)
    return np.concatenate([[0.0], np.cumsum(p.time_step * p.cost_series(times, np.asarray(xstar, float)))])


def regret(log: TrajectoryLog, i: int, xstar, upto: float | None = None) -> float:
    """Accumulated network cost of agent ``i``'s trajectory minus that of ``x*``."""
    log._checked(i)
    xstar = np.asarray(xstar, dtype=float)
    if xstar.shape != (log.problem.action_dim,):
        raise MetricError("x* has the wrong dimension")
    r = len(log.record_times) - 1 if upto is None else log.record_at(upto)
    k = int(log.record_steps[r])
    bench = benchmark_cost_integral(log.problem, xstar, k)[k]
    return float(log.total_cost[r, i] - bench)


def fit(log: TrajectoryLog, i: int, j: int, xstar=None, upto: float | None = None) -> np.ndarray:
    """Integral of agent ``j``'s constraints along agent ``i``'s trajectory.

    With ``xstar`` the benchmark's own accumulation is subtracted (relative form).
    """
    log._checked(i)
    log._checked(j)
    r = len(log.record_times) - 1 if upto is None else log.record_at(upto)
    rows = log.problem.agent_rows(j)
    value = log.fit[r, i, rows].copy()
    if xstar is not None:
        k = int(log.record_steps[r])
        times = np.arange(k) * log.step
        if k:
            value -= (log.step * log.problem.constraint_series(times, np.asarray(xstar, float))[:, rows]).sum(axis=0)
    return value


def saturated_fit(log: TrajectoryLog, i: int, j: int, delta: float, upto: float | None = None) -> np.ndarray:
    """Fit with every constraint value floored at ``-delta`` before integrating."""
    if not delta > 0:
        raise MetricError("delta must be positive")
    log._checked(i)
    log._checked(j)
    match = [d for d in log.saturated if math.isclose(d, delta, rel_tol=1e-12)]
    if not match:
        raise MetricError(f"delta={delta} was not tracked; add it to saturation_deltas")
    r = len(log.record_times) - 1 if upto is None else log.record_at(upto)
    return log.saturated[match[0]][r, i, log.problem.agent_rows(j)].copy()


def disagreement(log: TrajectoryLog, i: int, j: int, upto: float | None = None) -> float:
    log._checked(i)
    log._checked(j)
    if i == j:
        return 0.0
    r = len(log.record_times) - 1 if upto is None else log.record_at(upto)
    return float(log.disagreement[r, log.pair_index(i, j)])


# closed-form bounds ----------------------------------------------------------------------------

def _initial_gap(p: ProblemSpec, x0, xstar) -> float:
    """``||x* - x(0)||^2`` with ``x*`` repeated for every agent."""
    d = np.asarray(x0, float).reshape(p.agent_count, p.action_dim) - np.asarray(xstar, float)
    return float((d * d).sum())


def _check_zero_start(cfg: EngineConfig, x0) -> None:
    for label, arr in (("lambda", cfg.initial_lambda), ("mu", cfg.initial_mu)):
        if arr is not None and np.any(np.asarray(arr) != 0):
            raise BoundHypothesisViolated(f"bound assumes zero initial {label}")


def _x0(p, cfg, x0):
    if x0 is not None:
        return x0
    if cfg.initial_x is not None:
        return p.action_set.project(np.asarray(cfg.initial_x, float).reshape(p.agent_count, p.action_dim))
    return np.broadcast_to(p.action_set.project(np.zeros(p.action_dim)), (p.agent_count, p.action_dim))


def disagreement_bound_value(D, K, gamma, epsilon, gap, T) -> float:
    return D * math.sqrt((K + gamma) * T + (1.0 + gap) / (2.0 * epsilon))


def regret_bound_value(N, L0, D, K, gamma, epsilon, gap, T) -> float:
    # the leading term is reported as printed, without the 1/2 of the energy function
    return (1.0 + gap) / epsilon + (N - 1) * L0 * disagreement_bound_value(D, K, gamma, epsilon, gap, T)


def fit_norm_bound_value(K, epsilon, gap, T) -> float:
    """Bound on the norm of the positive part of an agent's own fit (needs epsilon > 1/2)."""
    if epsilon <= 0.5:
        return math.inf
    return math.sqrt((gap + 2.0 * epsilon * K * T) / (2.0 * epsilon - 1.0))


def disagreement_bound(p: ProblemSpec, g: Graph, cfg: EngineConfig, xstar, T: float | None = None, x0=None) -> float:
    x0 = _x0(p, cfg, x0)
    _check_zero_start(cfg, x0)
    T = cfg.horizon if T is None else T
    return disagreement_bound_value(
        diameter(g), p.cost_floor_gap, p.gamma, cfg.epsilon, _initial_gap(p, x0, xstar), T
    )


def regret_bound(p: ProblemSpec, g: Graph, cfg: EngineConfig, xstar, T: float | None = None, x0=None) -> float:
    x0 = _x0(p, cfg, x0)
    _check_zero_start(cfg, x0)
    T = cfg.horizon if T is None else T
    return regret_bound_value(
        p.agent_count, p.lipschitz_cost, diameter(g), p.cost_floor_gap, p.gamma, cfg.epsilon,
        _initial_gap(p, x0, xstar), T,
    )


def fit_norm_bound(p: ProblemSpec, cfg: EngineConfig, xstar, T: float | None = None, x0=None) -> float:
    x0 = _x0(p, cfg, x0)
    _check_zero_start(cfg, x0)
    T = cfg.horizon if T is None else T
    return fit_norm_bound_value(p.cost_floor_gap, cfg.epsilon, _initial_gap(p, x0, xstar), T)


def sublinearity_ratio(value: float, T: float) -> float:
    return value / math.sqrt(T) if T > 0 else math.nan


# energy inequality -------------------------------------------------------------------------------

def lemma1_gaps(log: TrajectoryLog, p: ProblemSpec, g: Graph, cfg: EngineConfig, refs) -> np.ndarray:
    """Gap of the integrated energy inequality for several reference triples.

    For each ``(x_ref, lambda_ref, mu_ref)`` returns
    ``int [L(t, x(t), lambda_ref, mu_ref) - L(t, x_ref, lambda(t), mu(t))] dt - V0 / epsilon``
    which is nonpositive for the continuous flow.  Needs ``keep_history``.
    """
    if log.lam_history is None and p.constraint_total:
        raise MetricError("lemma1_gap needs a log recorded with keep_history=True")
    refs = [tuple(np.asarray(a, dtype=float) for a in ref) for ref in refs]
    N, n, M = p.agent_count, p.action_dim, p.constraint_total
    for rx, rl, rm in refs:
        if rx.shape != (N, n) or rl.shape != (M,) or rm.shape != (g.slot_count,):
            raise MetricError("reference shapes do not match the network")
        if np.any(rl < 0) or np.any(rm < 0):
            raise MetricError("reference multipliers must be nonnegative")
        if not p.action_set.contains(rx, tol=1e-9):
            raise MetricError("reference actions must lie in the action set")

    h = cfg.step
    K = int(log.record_steps[-1])
    owner = p.constraint_owner
    R = len(refs)
    pts = np.concatenate([rx for rx, _, _ in refs]) if R else np.empty((0, n))
    diag = np.arange(N)
    cost_ref = np.zeros(R)
    lam_term = np.zeros(R)
    for k in range(K):
        t = k * h
        C = p.cost_matrix(t, pts).reshape(N, R, N)
        cost_ref += h * C[diag, :, diag].sum(axis=0)
        if M:
            F = p.constraint_matrix(t, pts).reshape(M, R, N)[np.arange(M), :, owner]
            lam_term += h * (log.lam_history[k] @ F)

    out = np.empty(R)
    own_fit = log.fit[-1][owner, np.arange(M)] if M else np.zeros(0)
    for r, (rx, rl, rm) in enumerate(refs):
        d = rx[g.slot_src] - rx[g.slot_dst]
        g_ref = (d * d).sum(axis=1) - p.gamma
        along_x = log.own_cost[-1].sum() + rl @ own_fit + rm @ log.slot_constraint
        along_ref = cost_ref[r] + lam_term[r] + g_ref @ log.mu_integral
        v0 = energy(log.initial, rx, rl, rm)
        out[r] = along_x - along_ref - v0 / cfg.epsilon
    return out


def lemma1_gap(log, p, g, cfg, ref_x, ref_lambda, ref_mu) -> float:
    return float(lemma1_gaps(log, p, g, cfg, [(ref_x, ref_lambda, ref_mu)])[0])


def lagrangian_integral_direct(log: TrajectoryLog, p, g, ref_x, ref_lambda, ref_mu, states):
    """Slow reference for tests: integrate both Lagrangians from a dense state list."""
    h = log.step
    along_x = sum(h * lagrangian(p, g, s.t, s.x, ref_lambda, ref_mu) for s in states[:-1])
    along_ref = sum(h * lagrangian(p, g, s.t, ref_x, s.lam, s.mu) for s in states[:-1])
    return along_x, along_ref
