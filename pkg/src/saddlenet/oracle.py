"""Offline clairvoyant benchmark: one fixed action feasible at every sampled time.

Both solvers work on the engine's own time grid (``p.sample_times()``), so the
benchmark integral uses exactly the quadrature of the trajectory metrics.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .problem import ProblemSpec


class OracleError(ValueError):
    pass


class NoFeasiblePoint(OracleError):
    def __init__(self, best_violation: float):
        super().__init__(f"no grid point is feasible; least worst violation {best_violation:.6g}")
        self.best_violation = best_violation


@dataclass(frozen=True)
class OracleResult:
    xstar: np.ndarray
    objective_integral: float
    worst_violation: float
    method: str
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["xstar"] = [float(v) for v in self.xstar]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OracleResult":
        return cls(
            xstar=np.asarray(d["xstar"], float),
            objective_integral=float(d["objective_integral"]),
            worst_violation=float(d["worst_violation"]),
            method=str(d["method"]),
            meta=dict(d.get("meta", {})),
        )


def dump_result(result: OracleResult, path, context: dict | None = None) -> None:
    payload = result.to_dict()
    if context is not None:
        payload["context"] = context
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def load_result(path) -> tuple[OracleResult, dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return OracleResult.from_dict(payload), payload.get("context", {})


def _times(p: ProblemSpec, times):
    t = p.sample_times() if times is None else np.asarray(times, float)
    # T = 0 still has to respect the constraints at the initial instant
    return t if len(t) else np.zeros(1)


def objective_integral(p: ProblemSpec, x, times=None) -> float:
    """Same left-rectangle sum the regret metric uses."""
    t = p.sample_times() if times is None else np.asarray(times, float)
    if len(t) == 0:
        return 0.0
    return float(np.cumsum(p.time_step * p.cost_series(t, x))[-1])


def worst_violation(p: ProblemSpec, x, times=None) -> float:
    if p.constraint_total == 0:
        return -math.inf
    return float(p.constraint_series(_times(p, times), np.asarray(x, float)).max())


def grid_oracle(
    p: ProblemSpec,
    resolution: int,
    times=None,
    tol: float = 1e-9,
    chunk: int = 65536,
) -> OracleResult:
    """Exhaustive search over a ``resolution``-per-axis grid of the action box."""
    s = p.action_set
    if s.kind != "box":
        raise OracleError("grid oracle needs a box action set")
    if p.action_dim > 3:
        raise OracleError(f"grid oracle supports dimension <= 3, got {p.action_dim}")
    if resolution < 2:
        raise OracleError("resolution must be at least 2")
    t = _times(p, times)
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(s.lower, s.upper)]
    # ij ordering enumerates points lexicographically, so argmin breaks ties low
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p.action_dim)

    obj = np.empty(len(pts))
    worst = np.empty(len(pts))
    qt = p.sample_times() if times is None else np.asarray(times, float)
    for a in range(0, len(pts), chunk):
        block = pts[a : a + chunk]
        obj[a : a + chunk] = p.integrated_cost(qt, block)
        worst[a : a + chunk] = p.worst_constraint(t, block)

    feasible = worst <= tol
    if not feasible.any():
        raise NoFeasiblePoint(float(worst.min()))
    masked = np.where(feasible, obj, np.inf)
    k = int(np.argmin(masked))
    x = pts[k].copy()
    return OracleResult(
        xstar=x,
        objective_integral=objective_integral(p, x, times),
        worst_violation=worst_violation(p, x, times),
        method="grid",
        meta={
            "resolution": int(resolution),
            "cell": float(max((ax[1] - ax[0]) for ax in axes)),
            "feasible_points": int(feasible.sum()),
            "tolerance": tol,
        },
    )


def subgradient_oracle(
    p: ProblemSpec,
    iterations: int,
    step_scale: float | None = None,
    times=None,
    x0=None,
    tol: float = 1e-6,
    penalty: float | None = None,
    stage_count: int = 4,
) -> OracleResult:
    """Projected subgradient on ``integral f0 + rho * integral sum_r [f_r]^+``.

    Steps are normalized, ``step_scale / sqrt(k)``; ``rho`` starts at
    ``1e3 * max(L0, 1)`` and doubles whenever a tenth of the budget passes
    without a feasible iterate.  An infeasible result is pulled towards the
    problem's witness, when it has one, just far enough to become feasible.  The budget is split into ``stage_count``
    restarts from the best point so far, each with a 4x smaller scale.  Returns the best feasible iterate, or the least
    violating one when none was feasible.
    """
    if iterations < 0:
        raise OracleError("iterations must be nonnegative")
    s = p.action_set
    t = _times(p, times)
    qt = p.sample_times() if times is None else np.asarray(times, float)
    h = p.time_step
    x = s.project(np.zeros(p.action_dim) if x0 is None else np.asarray(x0, float))
    c = 0.5 * s.diameter() if step_scale is None else float(step_scale)
    rho = 1e3 * max(p.lipschitz_cost, 1.0) if penalty is None else float(penalty)
    rho0 = rho

    def evaluate(x):
        obj = objective_integral(p, x, times)
        if p.constraint_total == 0:
            return obj, -math.inf, np.zeros((0,))
        F = p.constraint_series(t, x)
        return obj, float(F.max()), F

    best = None  # (feasible, key, x, obj, worst)
    # restart from the best iterate with a 4x smaller scale each stage
    stages = max(1, min(stage_count, iterations))
    budget = [iterations // stages + (1 if s_ < iterations % stages else 0) for s_ in range(stages)]
    patience = max(iterations // 10, 1)
    since_feasible = 0
    doublings = 0
    evaluated = 0
    for stage, count in enumerate(budget):
        scale = c / 4.0**stage
        if best is not None:
            x = best[2].copy()
        for k in range(count + 1):
            obj, worst, F = evaluate(x)
            evaluated += 1
            feasible = worst <= tol
            key = obj if feasible else worst
            if best is None or (feasible and (not best[0] or key < best[1])) or (
                not feasible and not best[0] and key < best[1]
            ):
                best = (feasible, key, x.copy(), obj, worst)
            since_feasible = 0 if feasible else since_feasible + 1
            if k == count:
                break
            if since_feasible >= patience:
                rho *= 2.0
                doublings += 1
                since_feasible = 0

            g = h * p.cost_subgradient_series(qt, x).sum(axis=0) if len(qt) else np.zeros(p.action_dim)
            if p.constraint_total:
                active = F > 0
                rows = active.any(axis=1)
                if rows.any():
                    J = p.constraint_jacobian_series(t[rows], x)
                    g = g + rho * (h if len(qt) else 1.0) * J[active[rows]].sum(axis=0)
            norm = float(np.linalg.norm(g))
            if norm == 0.0:
                break
            x = s.project(x - (scale / math.sqrt(k + 1)) * g / norm)
    if best is None:
        obj, worst, _ = evaluate(x)
        best = (worst <= tol, obj, x.copy(), obj, worst)

    feasible, _, xb, obj, worst = best
    restored = None
    if not feasible and p.feasible_witness is not None:
        theta = _restore(p, xb, t, tol)
        if theta is not None:
            xb = (1.0 - theta) * xb + theta * p.feasible_witness
            obj, worst, _ = evaluate(xb)
            feasible, restored = worst <= tol, theta
    return OracleResult(
        xstar=xb,
        objective_integral=obj,
        worst_violation=worst,
        method="subgradient",
        meta={
            "iterations": int(iterations),
            "step_scale": c,
            "penalty_initial": rho0,
            "penalty_final": rho,
            "penalty_doublings": doublings,
            "stages": stages,
            "feasible": bool(feasible),
            "restoration_weight": restored,
            "tolerance": tol,
        },
    )


def _restore(p: ProblemSpec, x, t, tol: float, rounds: int = 60):
    """Smallest weight on the witness that makes ``x`` feasible (bisection).

    Convexity makes the worst violation along the segment to a strictly
    feasible witness cross zero exactly once.
    """
    w = p.feasible_witness
    if float(p.constraint_series(t, w).max()) > 0:
        return None
    lo, hi = 0.0, 1.0
    for _ in range(rounds):
        mid = 0.5 * (lo + hi)
        if float(p.constraint_series(t, (1.0 - mid) * x + mid * w).max()) <= 0:
            hi = mid
        else:
            lo = mid
    return hi


def solve(p: ProblemSpec, method: str = "auto", resolution: int = 201, iterations: int = 2000, **kw):
    """Grid search when the box is small enough, subgradient otherwise."""
    if method == "auto":
        method = "grid" if p.action_set.kind == "box" and p.action_dim <= 2 else "subgradient"
    if method == "grid":
        return grid_oracle(p, resolution, **kw)
    if method == "subgradient":
        return subgradient_oracle(p, iterations, **kw)
    raise OracleError(f"unknown oracle method {method!r}")
