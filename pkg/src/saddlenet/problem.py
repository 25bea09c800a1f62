"""Environment model: action sets, time-varying costs and constraints.

A :class:`ProblemSpec` owns ``N`` agents, each with a convex cost
``f0i(t, x)`` and a vector of ``m_i`` convex constraints ``f_i(t, x) <= 0``.
Constraint rows of all agents are stacked into one flat vector of length
``M = sum(m_i)``; ``constraint_owner[r]`` names the agent owning row ``r``.

Subclasses implement the four per-agent hooks (``_cost``, ``_constraints``,
``_cost_subgradient``, ``_constraint_jacobian``).  The batched methods have
looping defaults and are overridden by the built-in scenarios for speed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ProblemError(ValueError):
    pass


class HorizonError(ProblemError):
    pass


# action sets ----------------------------------------------------------------

@dataclass(frozen=True)
class ActionSet:
    """Compact convex action set: an axis-aligned box or a Euclidean ball."""

    kind: str
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float | None = None

    @property
    def dim(self) -> int:
        return int((self.lower if self.kind == "box" else self.center).size)

    def project(self, y):
        """Euclidean projection; accepts a point or a stack of points ``(..., n)``."""
        y = np.asarray(y, dtype=float)
        if self.kind == "box":
            return np.minimum(np.maximum(y, self.lower), self.upper)
        d = y - self.center
        norm = np.sqrt((d * d).sum(axis=-1, keepdims=True))
        scale = np.where(norm > self.radius, self.radius / np.where(norm > 0, norm, 1.0), 1.0)
        return self.center + d * scale

    def contains(self, y, tol: float = 1e-12) -> bool:
        y = np.asarray(y, dtype=float)
        if self.kind == "box":
            return bool(np.all(y >= self.lower - tol) and np.all(y <= self.upper + tol))
        return bool(np.all(np.linalg.norm(y - self.center, axis=-1) <= self.radius + tol))

    def diameter(self) -> float:
        if self.kind == "box":
            return float(np.linalg.norm(self.upper - self.lower))
        return 2.0 * float(self.radius)

    def max_norm(self) -> float:
        """Largest Euclidean norm of any point in the set."""
        if self.kind == "box":
            return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))
        return float(np.linalg.norm(self.center)) + float(self.radius)

    def max_l1_norm(self) -> float:
        if self.kind == "box":
            return float(np.maximum(np.abs(self.lower), np.abs(self.upper)).sum())
        return float(np.abs(self.center).sum() + np.sqrt(self.dim) * self.radius)


def box(lower, upper) -> ActionSet:
    lo = np.atleast_1d(np.asarray(lower, dtype=float)).copy()
    hi = np.atleast_1d(np.asarray(upper, dtype=float)).copy()
    if lo.shape != hi.shape or lo.ndim != 1:
        raise ProblemError("box bounds must be 1-D arrays of equal length")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ProblemError("box bounds must be finite")
    if np.any(lo > hi):
        raise ProblemError("box lower bound exceeds upper bound")
    lo.flags.writeable = False
    hi.flags.writeable = False
    return ActionSet("box", lower=lo, upper=hi)


def ball(center, radius: float) -> ActionSet:
    c = np.atleast_1d(np.asarray(center, dtype=float)).copy()
    if not radius > 0:
        raise ProblemError("ball radius must be positive")
    c.flags.writeable = False
    return ActionSet("ball", center=c, radius=float(radius))


def project_action(s: ActionSet, y) -> np.ndarray:
    return s.project(y)


# logistic loss ----------------------------------------------------------------

def softplus(u):
    """``log(1 + exp(u))`` without overflow."""
    return np.logaddexp(0.0, u)


def sigmoid(u):
    return np.exp(-np.logaddexp(0.0, -np.asarray(u, dtype=float)))


def logistic_loss(y: float, z, x) -> float:
    """``log(1 + exp(-y <x, z>))`` for a label ``y`` in {-1, +1}."""
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    if z.shape != x.shape:
        raise ProblemError(f"feature dimension {z.shape} does not match classifier {x.shape}")
    return float(softplus(-y * float(z @ x)))


def logistic_loss_gradient(y: float, z, x) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    if z.shape != x.shape:
        raise ProblemError(f"feature dimension {z.shape} does not match classifier {x.shape}")
    return -y * float(sigmoid(-y * float(z @ x))) * z


# problem base -------------------------------------------------------------------

class ProblemSpec:
    """Time-varying multi-agent convex program plus its assumption constants.

    ``lipschitz_cost``, ``lipschitz_constraint`` and ``cost_floor_gap`` only
    feed the reported bounds; the dynamics never read them.
    """

    name = "custom"

    def __init__(
        self,
        *,
        action_dim: int,
        agent_count: int,
        constraint_counts: Sequence[int],
        action_set: ActionSet,
        horizon: float,
        time_step: float,
        gamma: float,
        lipschitz_cost: float,
        lipschitz_constraint: float,
        cost_floor_gap: float,
        feasible_witness=None,
        regularizer_weight: float | None = None,
        params: dict | None = None,
    ):
        if action_dim < 1 or agent_count < 1:
            raise ProblemError("action_dim and agent_count must be positive")
        if action_set.dim != action_dim:
            raise ProblemError("action set dimension does not match action_dim")
        counts = tuple(int(m) for m in constraint_counts)
        if len(counts) != agent_count or any(m < 0 for m in counts):
            raise ProblemError("constraint_counts needs one nonnegative entry per agent")
        if gamma < 0:
            raise ProblemError("gamma must be nonnegative")
        for label, value in (
            ("lipschitz_cost", lipschitz_cost),
            ("lipschitz_constraint", lipschitz_constraint),
            ("cost_floor_gap", cost_floor_gap),
        ):
            if not value > 0:
                raise ProblemError(f"{label} must be positive")
        if not horizon >= 0 or not time_step > 0:
            raise ProblemError("horizon must be >= 0 and time_step > 0")

        self.action_dim = int(action_dim)
        self.agent_count = int(agent_count)
        self.constraint_counts = counts
        self.action_set = action_set
        self.horizon = float(horizon)
        self.time_step = float(time_step)
        self.gamma = float(gamma)
        self.lipschitz_cost = float(lipschitz_cost)
        self.lipschitz_constraint = float(lipschitz_constraint)
        self.cost_floor_gap = float(cost_floor_gap)
        self.feasible_witness = None if feasible_witness is None else np.asarray(feasible_witness, float)
        self.regularizer_weight = regularizer_weight
        self.params = dict(params or {})

        self.constraint_total = int(sum(counts))
        self.constraint_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.intp)
        self.constraint_owner = np.repeat(np.arange(agent_count), counts).astype(np.intp)

    # -- time grid
    def step_count(self) -> int:
        return int(round(self.horizon / self.time_step))

    def sample_times(self) -> np.ndarray:
        """Left endpoints ``k h`` of the quadrature grid, ``k = 0..K-1``."""
        return np.arange(self.step_count()) * self.time_step

    def check_time(self, t: float) -> None:
        if not (-1e-9 <= t <= self.horizon + 1e-9 * max(1.0, self.horizon)):
            raise HorizonError(f"t={t} lies outside the horizon [0, {self.horizon}]")

    def agent_rows(self, i: int) -> slice:
        return slice(int(self.constraint_offsets[i]), int(self.constraint_offsets[i + 1]))

    # -- per-agent hooks
    def _cost(self, i: int, t: float, x: np.ndarray) -> float:
        raise NotImplementedError

    def _constraints(self, i: int, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cost_subgradient(self, i: int, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _constraint_jacobian(self, i: int, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- batched, one time instant
    def cost_matrix(self, t: float, points: np.ndarray) -> np.ndarray:
        """``C[j, p] = f0j(t, points[p])``."""
        return np.array(
            [[self._cost(j, t, p) for p in points] for j in range(self.agent_count)], dtype=float
        ).reshape(self.agent_count, len(points))

    def constraint_matrix(self, t: float, points: np.ndarray) -> np.ndarray:
        """``F[r, p]`` is constraint row ``r`` evaluated at ``points[p]``."""
        out = np.empty((self.constraint_total, len(points)))
        for j in range(self.agent_count):
            rows = self.agent_rows(j)
            if rows.stop > rows.start:
                for q, p in enumerate(points):
                    out[rows, q] = self._constraints(j, t, p)
        return out

    def own_costs(self, t: float, X: np.ndarray, agents=None) -> np.ndarray:
        agents = self._agents(agents)
        return np.array([self._cost(i, t, X[i]) for i in agents], dtype=float)

    def own_cost_subgradients(self, t: float, X: np.ndarray, agents=None) -> np.ndarray:
        agents = self._agents(agents)
        return np.array([self._cost_subgradient(i, t, X[i]) for i in agents], dtype=float).reshape(
            len(agents), self.action_dim
        )

    def own_constraint_values(self, t: float, X: np.ndarray, agents=None) -> np.ndarray:
        """Rows owned by ``agents`` (in row order), each at its owner's point."""
        agents = self._agents(agents)
        parts = [np.asarray(self._constraints(i, t, X[i]), float).reshape(-1) for i in agents]
        return np.concatenate(parts) if parts else np.empty(0)

    def own_constraint_jacobians(self, t: float, X: np.ndarray, agents=None) -> np.ndarray:
        agents = self._agents(agents)
        parts = [
            np.asarray(self._constraint_jacobian(i, t, X[i]), float).reshape(-1, self.action_dim)
            for i in agents
        ]
        return np.concatenate(parts) if parts else np.empty((0, self.action_dim))

    def _agents(self, agents):
        return range(self.agent_count) if agents is None else agents

    # -- many points, many times (grid oracle)
    def integrated_cost(self, times, points) -> np.ndarray:
        """Left-rectangle ``integral f0(t, p) dt`` over ``times`` for each row of ``points``."""
        points = np.asarray(points, float)
        acc = np.zeros(len(points))
        for t in times:
            acc += self.cost_matrix(t, points).sum(axis=0)
        return self.time_step * acc

    def worst_constraint(self, times, points) -> np.ndarray:
        """``max`` over ``times`` and all rows of ``f_r(t, p)``; ``-inf`` without constraints."""
        points = np.asarray(points, float)
        worst = np.full(len(points), -np.inf)
        if self.constraint_total == 0:
            return worst
        for t in times:
            np.maximum(worst, self.constraint_matrix(t, points).max(axis=0), out=worst)
        return worst

    # -- one point, many times (oracle side)
    def cost_series(self, times, x) -> np.ndarray:
        """``f0(t, x) = sum_j f0j(t, x)`` for every ``t`` in ``times``."""
        return np.array([sum(self._cost(j, t, x) for j in range(self.agent_count)) for t in times])

    def cost_subgradient_series(self, times, x) -> np.ndarray:
        return np.array(
            [
                np.sum([self._cost_subgradient(j, t, x) for j in range(self.agent_count)], axis=0)
                for t in times
            ]
        ).reshape(len(times), self.action_dim)

    def constraint_series(self, times, x) -> np.ndarray:
        x = np.asarray(x, float)[None, :]
        return np.array([self.constraint_matrix(t, x)[:, 0] for t in times]).reshape(
            len(times), self.constraint_total
        )

    def constraint_jacobian_series(self, times, x) -> np.ndarray:
        """``(K, M, n)`` stack of constraint-row subgradients at ``x``."""
        x = np.asarray(x, float)
        out = np.empty((len(times), self.constraint_total, self.action_dim))
        for k, t in enumerate(times):
            for j in range(self.agent_count):
                rows = self.agent_rows(j)
                if rows.stop > rows.start:
                    out[k, rows] = np.asarray(self._constraint_jacobian(j, t, x)).reshape(
                        -1, self.action_dim
                    )
        return out


class FunctionProblem(ProblemSpec):
    """Problem assembled from plain per-agent callables ``fn(i, t, x)``.

    ``constraints`` may be ``None`` for an unconstrained problem.  Missing
    gradient callables fall back to central differences, which is only
    appropriate for smooth test problems.
    """

    def __init__(
        self,
        *,
        cost: Callable,
        cost_subgradient: Callable | None = None,
        constraints: Callable | None = None,
        constraint_jacobian: Callable | None = None,
        constraint_counts: Sequence[int] | None = None,
        **kwargs,
    ):
        n_agents = kwargs["agent_count"]
        if constraint_counts is None:
            constraint_counts = [0] * n_agents
        super().__init__(constraint_counts=constraint_counts, **kwargs)
        self._f0 = cost
        self._g0 = cost_subgradient
        self._f = constraints
        self._jf = constraint_jacobian

    def _cost(self, i, t, x):
        return float(self._f0(i, t, np.asarray(x, float)))

    def _constraints(self, i, t, x):
        if self.constraint_counts[i] == 0:
            return np.empty(0)
        return np.asarray(self._f(i, t, np.asarray(x, float)), float).reshape(-1)

    def _cost_subgradient(self, i, t, x):
        if self._g0 is not None:
            return np.asarray(self._g0(i, t, np.asarray(x, float)), float)
        return _central_difference(lambda y: self._cost(i, t, y), x)

    def _constraint_jacobian(self, i, t, x):
        if self.constraint_counts[i] == 0:
            return np.empty((0, self.action_dim))
        if self._jf is not None:
            return np.asarray(self._jf(i, t, np.asarray(x, float)), float).reshape(-1, self.action_dim)
        return np.array(
            [
                _central_difference(lambda y, k=k: self._constraints(i, t, y)[k], x)
                for k in range(self.constraint_counts[i])
            ]
        )


def _central_difference(fn, x, step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        grad[k] = (fn(x + e) - fn(x - e)) / (2 * step)
    return grad


# module-level operations -----------------------------------------------------------

def _check_point(p: ProblemSpec, i: int, t: float, x) -> np.ndarray:
    if not 0 <= i < p.agent_count:
        raise IndexError(f"agent {i} out of range")
    p.check_time(t)
    x = np.asarray(x, dtype=float)
    if x.shape != (p.action_dim,):
        raise ProblemError(f"point has shape {x.shape}, expected ({p.action_dim},)")
    return x


def eval_cost(p: ProblemSpec, i: int, t: float, x) -> float:
    x = _check_point(p, i, t, x)
    return float(p.cost_matrix(t, x[None, :])[i, 0])


def eval_constraints(p: ProblemSpec, i: int, t: float, x) -> np.ndarray:
    x = _check_point(p, i, t, x)
    return p.constraint_matrix(t, x[None, :])[p.agent_rows(i), 0].copy()


def cost_subgradient(p: ProblemSpec, i: int, t: float, x) -> np.ndarray:
    x = _check_point(p, i, t, x)
    X = np.zeros((p.agent_count, p.action_dim))
    X[i] = x
    return p.own_cost_subgradients(t, X, agents=[i])[0]


def constraint_subgradient(p: ProblemSpec, i: int, t: float, x, k: int) -> np.ndarray:
    x = _check_point(p, i, t, x)
    if not 0 <= k < p.constraint_counts[i]:
        raise IndexError(f"agent {i} has {p.constraint_counts[i]} constraints, asked for {k}")
    X = np.zeros((p.agent_count, p.action_dim))
    X[i] = x
    return p.own_constraint_jacobians(t, X, agents=[i])[k]


def witness_violation(p: ProblemSpec, times=None) -> float | None:
    """Largest constraint value at the witness over ``times`` (None without a witness)."""
    if p.feasible_witness is None:
        return None
    if p.constraint_total == 0:
        return -np.inf
    times = p.sample_times() if times is None else times
    if len(times) == 0:
        times = np.zeros(1)
    return float(p.constraint_series(times, p.feasible_witness).max())


class SaturatedProblem(ProblemSpec):
    """``p`` with every constraint replaced by ``max(f, -delta)``.

    Running the engine on this problem drives the multipliers with the floored
    constraints; its plain fit is the saturated fit of ``p``.  At ``f = -delta``
    the zero subgradient is used.
    """

    def __init__(self, base: ProblemSpec, delta: float):
        if not delta > 0:
            raise ProblemError("delta must be positive")
        self.base = base
        self.delta = float(delta)
        self.name = f"{base.name}+saturated"
        super().__init__(
            action_dim=base.action_dim,
            agent_count=base.agent_count,
            constraint_counts=base.constraint_counts,
            action_set=base.action_set,
            horizon=base.horizon,
            time_step=base.time_step,
            gamma=base.gamma,
            lipschitz_cost=base.lipschitz_cost,
            lipschitz_constraint=base.lipschitz_constraint,
            cost_floor_gap=base.cost_floor_gap,
            feasible_witness=base.feasible_witness,
            regularizer_weight=base.regularizer_weight,
            params=base.params,
        )
        self.holdout = getattr(base, "holdout", None)

    def _floor(self, f):
        return np.maximum(f, -self.delta)

    def cost_matrix(self, t, points):
        return self.base.cost_matrix(t, points)

    def constraint_matrix(self, t, points):
        return self._floor(self.base.constraint_matrix(t, points))

    def own_costs(self, t, X, agents=None):
        return self.base.own_costs(t, X, agents)

    def own_cost_subgradients(self, t, X, agents=None):
        return self.base.own_cost_subgradients(t, X, agents)

    def own_constraint_values(self, t, X, agents=None):
        return self._floor(self.base.own_constraint_values(t, X, agents))

    def own_constraint_jacobians(self, t, X, agents=None):
        f = self.base.own_constraint_values(t, X, agents)
        return self.base.own_constraint_jacobians(t, X, agents) * (f > -self.delta)[:, None]

    def integrated_cost(self, times, points):
        return self.base.integrated_cost(times, points)

    def worst_constraint(self, times, points):
        return self._floor(self.base.worst_constraint(times, points))

    def cost_series(self, times, x):
        return self.base.cost_series(times, x)

    def cost_subgradient_series(self, times, x):
        return self.base.cost_subgradient_series(times, x)

    def constraint_series(self, times, x):
        return self._floor(self.base.constraint_series(times, x))

    def constraint_jacobian_series(self, times, x):
        f = self.base.constraint_series(times, x)
        return self.base.constraint_jacobian_series(times, x) * (f > -self.delta)[..., None]

    def _cost(self, i, t, x):
        return self.base._cost(i, t, x)

    def _constraints(self, i, t, x):
        return self._floor(np.asarray(self.base._constraints(i, t, x), float))

    def _cost_subgradient(self, i, t, x):
        return self.base._cost_subgradient(i, t, x)

    def _constraint_jacobian(self, i, t, x):
        f = np.asarray(self.base._constraints(i, t, x), float).reshape(-1)
        J = np.asarray(self.base._constraint_jacobian(i, t, x), float).reshape(-1, self.action_dim)
        return J * (f > -self.delta)[:, None]
