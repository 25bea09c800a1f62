"""Built-in scenario library.

* ``quadratic_tracking``: agents track private moving targets under
  slowly rotating half-plane constraints.
* ``linear_feasibility``: zero cost, switching linear constraints.
* ``sparse_classifier_synthetic``: robots random-walking around a road
  intersection learn a sparse linear classifier from synthetic texture
  features (grass = +1, pavement = -1).
* ``sparse_classifier_csv``: the same learning problem fed from a CSV file
  with columns ``t, agent, label, z_0 .. z_{n-1}``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .problem import ProblemError, ProblemSpec, box, sigmoid, softplus
from .seeding import substream

SCENARIOS = (
    "quadratic_tracking",
    "linear_feasibility",
    "sparse_classifier_synthetic",
    "sparse_classifier_csv",
)


class ScenarioError(ProblemError):
    pass


class CsvSchemaError(ScenarioError):
    pass


_COMMON = {"agents": 4, "n": 2, "horizon": 10.0, "time_step": 0.01}

DEFAULTS = {
    "quadratic_tracking": {
        **_COMMON,
        "gamma": 0.1,
        "box_bound": 2.0,
        "constrained": True,
        "target_spread": 1.0,
        "target_amplitude": 0.5,
        "target_frequency": 0.2,
        "constraint_offset": 0.1,
        "normal_spread": 0.3,
        "normal_wobble": 0.2,
        "normal_frequency": 0.05,
    },
    "linear_feasibility": {
        **_COMMON,
        "gamma": 0.1,
        "box_bound": 1.0,
        "m": 2,
        "offset": 0.5,
        "switch_period": 1.0,
        "normals": None,
        "offsets": None,
    },
    "sparse_classifier_synthetic": {
        "agents": 20,
        "n": 16,
        "horizon": 100.0,
        "time_step": 0.02,
        "gamma": 10.0,
        "delta": 0.001,
        "box_bound": 10.0,
        "formulation": "constrained",
        "alpha": 0.05,
        "L": 15.0,
        "T_s": 1.0,
        "sigma_w": 1.0,
        "road_half_width": 5.0,
        "road": "cross",
        "images_per_period": 24,
        "sparsity": 4,
        "separation": 2.0,
        "feature_noise": 1.0,
        "offset_norm": 1.0,
        "margin": 0.5,
        "holdout_size": 2000,
    },
    "sparse_classifier_csv": {
        "agents": 4,
        "n": None,
        "horizon": 10.0,
        "time_step": 0.02,
        "gamma": 10.0,
        "delta": 0.001,
        "box_bound": 10.0,
        "formulation": "constrained",
        "alpha": 0.05,
        "path": None,
        "holdout_path": None,
        "witness": None,
    },
}


def scenario_params(name: str, params: dict | None = None) -> dict:
    """Defaults merged with ``params``; unknown keys are rejected."""
    if name not in DEFAULTS:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    params = dict(params or {})
    unknown = sorted(set(params) - set(DEFAULTS[name]))
    if unknown:
        raise ScenarioError(f"unknown parameter(s) for {name}: {', '.join(unknown)}")
    merged = {**DEFAULTS[name], **params}
    _require(merged, "agents", lambda v: isinstance(v, int) and v >= 1, "a positive integer")
    _require(merged, "horizon", lambda v: v >= 0, "nonnegative")
    _require(merged, "time_step", lambda v: v > 0, "positive")
    _require(merged, "gamma", lambda v: v >= 0, "nonnegative")
    if merged.get("n") is not None:
        _require(merged, "n", lambda v: isinstance(v, int) and v >= 1, "a positive integer")
    if "box_bound" in merged:
        _require(merged, "box_bound", lambda v: v > 0, "positive")
    if "delta" in merged:
        _require(merged, "delta", lambda v: v > 0, "positive")
    return merged


def _require(params, key, check, what):
    value = params[key]
    try:
        ok = check(value)
    except TypeError:
        ok = False
    if not ok:
        raise ScenarioError(f"parameter {key} must be {what}, got {value!r}")


def make_scenario(name: str, params: dict | None, seed: int):
    """Build ``(problem, feature_stream)``; the stream is ``None`` for analytic scenarios."""
    p = scenario_params(name, params)
    if name == "quadratic_tracking":
        return QuadraticTracking(p, seed), None
    if name == "linear_feasibility":
        return LinearFeasibility(p, seed), None
    if name == "sparse_classifier_synthetic":
        stream, holdout, witness = synthetic_feature_stream(p, seed)
        return StreamClassifier(p, stream, holdout, witness), stream
    stream, holdout = csv_feature_stream(p)
    witness = None if p["witness"] is None else np.asarray(p["witness"], float)
    return StreamClassifier(p, stream, holdout, witness), stream


# quadratic tracking ---------------------------------------------------------------

class QuadraticTracking(ProblemSpec):
    """``f0i(t, x) = 0.5 ||x - r_i(t)||^2`` with ``r_i`` circling a private center.

    With ``constrained`` each agent also sees ``a_i(t)^T x - b <= 0`` where the
    unit normal ``a_i(t)`` wobbles around a per-agent direction near the mean
    target, so the constraints bind.  The origin is a strict witness since
    ``b > 0``.
    """

    name = "quadratic_tracking"

    def __init__(self, params: dict, seed: int):
        n, N, B = params["n"], params["agents"], float(params["box_bound"])
        rng = substream(seed, "targets")
        self.centers = rng.uniform(-1.0, 1.0, size=(N, n)) * params["target_spread"]
        self.phases = rng.uniform(0.0, 2 * np.pi, size=N)
        self.amplitude = float(params["target_amplitude"])
        self.omega = float(params["target_frequency"])

        crng = substream(seed, "constraints")
        base = crng.uniform(0.0, 2 * np.pi)
        mean = self.centers.mean(axis=0)
        if n >= 2 and np.hypot(mean[0], mean[1]) > 1e-12:
            # lean the half-planes against the average target so they bind
            base = float(np.arctan2(mean[1], mean[0]))
        self.angles = base + params["normal_spread"] * crng.uniform(-1.0, 1.0, size=N)
        self.normal_phases = crng.uniform(0.0, 2 * np.pi, size=N)
        self.wobble = float(params["normal_wobble"])
        self.normal_omega = float(params["normal_frequency"])
        self.offset = float(params["constraint_offset"])
        constrained = bool(params["constrained"])
        if constrained and not self.offset > 0:
            raise ScenarioError("parameter constraint_offset must be positive")

        action_set = box(-B * np.ones(n), B * np.ones(n))
        radius = float(np.linalg.norm(self.centers, axis=1).max(initial=0.0)) + abs(self.amplitude)
        reach = action_set.max_norm() + radius
        super().__init__(
            action_dim=n,
            agent_count=N,
            constraint_counts=[1 if constrained else 0] * N,
            action_set=action_set,
            horizon=params["horizon"],
            time_step=params["time_step"],
            gamma=params["gamma"],
            lipschitz_cost=reach,
            lipschitz_constraint=1.0,
            cost_floor_gap=0.5 * N * reach**2,
            feasible_witness=np.zeros(n) if constrained else None,
            params=params,
        )

    def targets(self, t):
        """``(..., N, n)`` target positions for scalar or array ``t``."""
        t = np.asarray(t, float)[..., None]
        r = np.broadcast_to(self.centers, t.shape[:-1] + self.centers.shape).copy()
        if self.action_dim >= 2:
            ang = self.omega * t + self.phases
            r[..., 0] += self.amplitude * np.cos(ang)
            r[..., 1] += self.amplitude * np.sin(ang)
        else:
            r[..., 0] += self.amplitude * np.sin(self.omega * t + self.phases)
        return r

    def normals(self, t):
        t = np.asarray(t, float)[..., None]
        theta = self.angles + self.wobble * np.sin(self.normal_omega * t + self.normal_phases)
        a = np.zeros(t.shape[:-1] + (self.agent_count, self.action_dim))
        if self.action_dim >= 2:
            a[..., 0] = np.cos(theta)
            a[..., 1] = np.sin(theta)
        else:
            a[..., 0] = np.where(np.cos(self.angles) >= 0, 1.0, -1.0)
        return a

    def _constrained(self):
        return self.constraint_total > 0

    def cost_matrix(self, t, points):
        d = np.asarray(points, float)[None, :, :] - self.targets(t)[:, None, :]
        return 0.5 * (d * d).sum(axis=-1)

    def constraint_matrix(self, t, points):
        if not self._constrained():
            return np.empty((0, len(points)))
        return self.normals(t) @ np.asarray(points, float).T - self.offset

    def own_costs(self, t, X, agents=None):
        idx = self._idx(agents)
        d = X[idx] - self.targets(t)[idx]
        return 0.5 * (d * d).sum(axis=1)

    def own_cost_subgradients(self, t, X, agents=None):
        idx = self._idx(agents)
        return X[idx] - self.targets(t)[idx]

    def own_constraint_values(self, t, X, agents=None):
        if not self._constrained():
            return np.empty(0)
        idx = self._idx(agents)
        return (self.normals(t)[idx] * X[idx]).sum(axis=1) - self.offset

    def own_constraint_jacobians(self, t, X, agents=None):
        if not self._constrained():
            return np.empty((0, self.action_dim))
        return self.normals(t)[self._idx(agents)]

    def _idx(self, agents):
        return np.arange(self.agent_count) if agents is None else np.asarray(agents, dtype=np.intp)

    def cost_series(self, times, x):
        d = np.asarray(x, float) - self.targets(times)
        return 0.5 * (d * d).sum(axis=(-1, -2))

    def cost_subgradient_series(self, times, x):
        return (np.asarray(x, float) - self.targets(times)).sum(axis=-2)

    def constraint_series(self, times, x):
        if not self._constrained():
            return np.empty((len(times), 0))
        return self.normals(times) @ np.asarray(x, float) - self.offset

    def constraint_jacobian_series(self, times, x):
        if not self._constrained():
            return np.empty((len(times), 0, self.action_dim))
        return self.normals(times)

    def integrated_cost(self, times, points):
        # expand the square: sum_k sum_i 0.5 |p - r_ik|^2 needs only moment sums
        points = np.asarray(points, float)
        R = self.targets(np.asarray(times, float)).reshape(-1, self.action_dim)
        if len(R) == 0:
            return np.zeros(len(points))
        quad = 0.5 * len(R) * (points * points).sum(axis=1)
        return self.time_step * (quad - points @ R.sum(axis=0) + 0.5 * float((R * R).sum()))

    def worst_constraint(self, times, points):
        points = np.asarray(points, float)
        if not self._constrained():
            return np.full(len(points), -np.inf)
        times = np.asarray(times, float)
        if len(times) == 0:
            return np.full(len(points), -np.inf)
        if self.action_dim == 1:
            signs = np.unique(self.normals(times)[..., 0])
            return (signs[:, None] * points[None, :, 0]).max(axis=0) - self.offset
        theta = self.angles + self.wobble * np.sin(self.normal_omega * times[:, None] + self.normal_phases)
        radius = np.hypot(points[:, 0], points[:, 1])
        phi = np.arctan2(points[:, 1], points[:, 0])
        worst = np.full(len(points), -np.inf)
        for i in range(self.agent_count):
            # cos(theta - phi) over a sorted angle set peaks next to phi or at an end
            ang = np.unique(theta[:, i])
            centre = self.angles[i]
            rel = centre + np.mod(phi - centre + np.pi, 2 * np.pi) - np.pi
            pos = np.searchsorted(ang, rel)
            cand = np.stack(
                [
                    ang[np.clip(pos - 1, 0, len(ang) - 1)],
                    ang[np.clip(pos, 0, len(ang) - 1)],
                    np.full(len(points), ang[0]),
                    np.full(len(points), ang[-1]),
                ]
            )
            np.maximum(worst, (radius * np.cos(cand - phi)).max(axis=0), out=worst)
        return worst - self.offset

    def _cost(self, i, t, x):
        return float(self.cost_matrix(t, np.asarray(x, float)[None])[i, 0])

    def _constraints(self, i, t, x):
        return self.constraint_matrix(t, np.asarray(x, float)[None])[self.agent_rows(i), 0]

    def _cost_subgradient(self, i, t, x):
        return np.asarray(x, float) - self.targets(t)[i]

    def _constraint_jacobian(self, i, t, x):
        return self.normals(t)[i][None, :] if self._constrained() else np.empty((0, self.action_dim))


# linear feasibility ------------------------------------------------------------------

class LinearFeasibility(ProblemSpec):
    """Zero cost; agent ``i`` must keep ``A_i(t) x <= b_i`` with switching rows.

    Random unit normals are redrawn every ``switch_period``.  Explicit static
    ``normals`` (``m`` rows shared by all agents) and ``offsets`` override the
    random draw.
    """

    name = "linear_feasibility"

    def __init__(self, params: dict, seed: int):
        n, N, B = params["n"], params["agents"], float(params["box_bound"])
        if params["normals"] is not None:
            rows = np.atleast_2d(np.asarray(params["normals"], float))
            if rows.shape[1] != n:
                raise ScenarioError(f"parameter normals must have {n} columns")
            m = rows.shape[0]
            self.table = np.broadcast_to(rows, (1, N, m, n)).copy()
            self.period = math.inf
        else:
            m = int(params["m"])
            if m < 1:
                raise ScenarioError("parameter m must be a positive integer")
            self.period = float(params["switch_period"])
            if not self.period > 0:
                raise ScenarioError("parameter switch_period must be positive")
            slots = int(math.floor(params["horizon"] / self.period)) + 1
            raw = substream(seed, "constraints").normal(size=(slots, N, m, n))
            self.table = raw / np.linalg.norm(raw, axis=-1, keepdims=True)
        if params["offsets"] is not None:
            offsets = np.asarray(params["offsets"], float).reshape(-1)
            if offsets.size != m:
                raise ScenarioError(f"parameter offsets needs {m} entries")
        else:
            offsets = np.full(m, float(params["offset"]))
        self.offsets = offsets
        self.m = m
        witness = np.zeros(n) if np.all(offsets > 0) else None
        super().__init__(
            action_dim=n,
            agent_count=N,
            constraint_counts=[m] * N,
            action_set=box(-B * np.ones(n), B * np.ones(n)),
            horizon=params["horizon"],
            time_step=params["time_step"],
            gamma=params["gamma"],
            # zero cost: any positive constant is valid, keep them negligible
            lipschitz_cost=1e-9,
            lipschitz_constraint=float(np.linalg.norm(self.table, axis=-1).max()),
            cost_floor_gap=1e-9,
            feasible_witness=witness,
            params=params,
        )

    def _slot(self, t):
        if math.isinf(self.period):
            return np.zeros(np.shape(t), dtype=np.intp)
        s = np.floor(np.asarray(t, float) / self.period + 1e-9).astype(np.intp)
        return np.clip(s, 0, self.table.shape[0] - 1)

    def rows_at(self, t):
        """``(N*m, n)`` stacked constraint normals at time ``t``."""
        return self.table[self._slot(t)].reshape(self.constraint_total, self.action_dim)

    def cost_matrix(self, t, points):
        return np.zeros((self.agent_count, len(points)))

    def constraint_matrix(self, t, points):
        b = np.tile(self.offsets, self.agent_count)
        return self.rows_at(t) @ np.asarray(points, float).T - b[:, None]

    def own_costs(self, t, X, agents=None):
        return np.zeros(len(self._idx(agents)))

    def own_cost_subgradients(self, t, X, agents=None):
        return np.zeros((len(self._idx(agents)), self.action_dim))

    def own_constraint_values(self, t, X, agents=None):
        idx = self._idx(agents)
        A = self.table[self._slot(t)][idx]
        return ((A * X[idx][:, None, :]).sum(axis=-1) - self.offsets).reshape(-1)

    def own_constraint_jacobians(self, t, X, agents=None):
        return self.table[self._slot(t)][self._idx(agents)].reshape(-1, self.action_dim)

    def _idx(self, agents):
        return np.arange(self.agent_count) if agents is None else np.asarray(agents, dtype=np.intp)

    def cost_series(self, times, x):
        return np.zeros(len(times))

    def cost_subgradient_series(self, times, x):
        return np.zeros((len(times), self.action_dim))

    def constraint_series(self, times, x):
        A = self.table[self._slot(np.asarray(times, float))]
        b = np.tile(self.offsets, self.agent_count)
        return (A @ np.asarray(x, float)).reshape(len(times), -1) - b

    def constraint_jacobian_series(self, times, x):
        A = self.table[self._slot(np.asarray(times, float))]
        return A.reshape(len(times), self.constraint_total, self.action_dim)

    def integrated_cost(self, times, points):
        return np.zeros(len(points))

    def worst_constraint(self, times, points):
        points = np.asarray(points, float)
        if len(times) == 0:
            return np.full(len(points), -np.inf)
        slots = np.unique(self._slot(np.asarray(times, float)))
        A = self.table[slots].reshape(-1, self.action_dim)
        b = np.tile(self.offsets, len(slots) * self.agent_count)
        return (A @ points.T - b[:, None]).max(axis=0)

    def _cost(self, i, t, x):
        return 0.0

    def _constraints(self, i, t, x):
        return self.constraint_matrix(t, np.asarray(x, float)[None])[self.agent_rows(i), 0]

    def _cost_subgradient(self, i, t, x):
        return np.zeros(self.action_dim)

    def _constraint_jacobian(self, i, t, x):
        return self.table[self._slot(t)][i]


# feature streams and the classification problem ---------------------------------------

@dataclass(frozen=True)
class FeatureStream:
    """Per-step features ``z_i(t_k)`` and labels ``y_i(t_k)`` on ``t_k = k dt``."""

    dt: float
    features: np.ndarray  # (K+1, N, n)
    labels: np.ndarray  # (K+1, N), entries in {-1, +1}
    positions: np.ndarray | None = None  # (K+1, N, 2) robot positions, synthetic only

    @property
    def step_count(self) -> int:
        return self.labels.shape[0] - 1

    def index(self, t):
        k = np.rint(np.asarray(t, float) / self.dt).astype(np.intp)
        return np.clip(k, 0, self.step_count)

    def tobytes(self) -> bytes:
        return self.features.tobytes() + self.labels.tobytes()


@dataclass(frozen=True)
class HoldoutSet:
    features: np.ndarray  # (P, n)
    labels: np.ndarray  # (P,)


def classification_error(x, holdout: HoldoutSet) -> float:
    """Fraction of held-out samples where ``sign(<x, z>)`` differs from the label."""
    pred = np.sign(holdout.features @ np.asarray(x, float))
    return float(np.mean(pred != holdout.labels))


def road_label(positions, half_width: float, road: str = "cross"):
    """-1 (pavement) on the road, +1 (grass) elsewhere."""
    px, py = positions[..., 0], positions[..., 1]
    if road == "cross":
        on_road = (np.abs(px) < half_width) | (np.abs(py) < half_width)
    elif road == "horizontal":
        on_road = np.abs(py) < half_width
    elif road == "vertical":
        on_road = np.abs(px) < half_width
    else:
        raise ScenarioError(f"parameter road must be cross, horizontal or vertical, got {road!r}")
    return np.where(on_road, -1, 1).astype(np.int8)


def random_walks(rng, agents: int, epochs: int, L: float, sigma_w: float):
    """Positions ``(epochs, agents, 2)`` reflected back into ``[-L, L]^2``."""
    pos = np.empty((epochs, agents, 2))
    pos[0] = rng.uniform(-L, L, size=(agents, 2))
    steps = rng.normal(0.0, math.sqrt(sigma_w), size=(max(epochs - 1, 0), agents, 2))
    for k in range(1, epochs):
        p = pos[k - 1] + steps[k - 1]
        # reflect; a single fold suffices unless a step exceeds 2L
        p = np.where(p > L, 2 * L - p, p)
        p = np.where(p < -L, -2 * L - p, p)
        pos[k] = np.clip(p, -L, L)
    return pos


class _ClassFeatures:
    """Two Gaussian class-conditionals, made separable along a sparse direction."""

    def __init__(self, params, seed):
        n, s = params["n"], int(params["sparsity"])
        if not 1 <= s <= n:
            raise ScenarioError("parameter sparsity must lie in [1, n]")
        rng = substream(seed, "class_model")
        support = np.sort(rng.choice(n, size=s, replace=False))
        u = np.zeros(n)
        u[support] = rng.choice([-1.0, 1.0], size=s) / math.sqrt(s)
        w = rng.normal(size=n)
        w -= (w @ u) * u
        norm = np.linalg.norm(w)
        self.offset = w / norm * params["offset_norm"] if norm > 0 else np.zeros(n)
        self.direction = u
        self.separation = float(params["separation"])
        self.noise = float(params["feature_noise"])
        self.margin = float(params["margin"])
        if not self.margin > 0:
            raise ScenarioError("parameter margin must be positive")

    def draw(self, rng, labels):
        y = labels.astype(float)[..., None]
        z = y * self.separation * self.direction + self.offset
        z = z + self.noise * rng.normal(size=labels.shape + (self.direction.size,))
        along = (y[..., 0]) * (z @ self.direction)
        lift = np.maximum(0.0, self.margin - along)
        return z + (lift * y[..., 0])[..., None] * self.direction


def synthetic_feature_stream(params: dict, seed: int):
    """Random-walk intersection scenario; returns ``(stream, holdout, witness)``."""
    N, T, dt = params["agents"], float(params["horizon"]), float(params["time_step"])
    Ts, per = float(params["T_s"]), int(params["images_per_period"])
    if not Ts > 0 or per < 1:
        raise ScenarioError("parameters T_s and images_per_period must be positive")
    if not params["sigma_w"] >= 0 or not params["L"] > 0:
        raise ScenarioError("parameters L and sigma_w must be positive")
    K = int(round(T / dt))
    times = np.arange(K + 1) * dt
    epochs = int(math.floor(T / Ts + 1e-9)) + 1
    walk = random_walks(substream(seed, "walks"), N, epochs, params["L"], params["sigma_w"])

    n_img = int(math.floor(T * per / Ts + 1e-9)) + 1
    img_epoch = np.minimum(np.arange(n_img) // per, epochs - 1)
    img_labels = road_label(walk[img_epoch], params["road_half_width"], params["road"])
    model = _ClassFeatures(params, seed)
    img_features = model.draw(substream(seed, "features"), img_labels)

    step_img = np.minimum(np.floor(times * per / Ts + 1e-9).astype(np.intp), n_img - 1)
    step_epoch = np.minimum(np.floor(times / Ts + 1e-9).astype(np.intp), epochs - 1)
    stream = FeatureStream(
        dt=dt,
        features=img_features[step_img],
        labels=img_labels[step_img],
        positions=walk[step_epoch],
    )

    hrng = substream(seed, "holdout")
    size = int(params["holdout_size"])
    h_labels = np.where(np.arange(size) % 2 == 0, 1, -1).astype(np.int8)
    holdout = HoldoutSet(model.draw(hrng, h_labels), h_labels)

    # scale the separating direction until every sample's loss is below delta
    need = -math.log(math.expm1(params["delta"]))
    witness = 1.1 * need / model.margin * model.direction
    return stream, holdout, witness


_CSV_HEAD = ("t", "agent", "label")


def read_feature_csv(path, agents: int, n: int | None = None):
    """Parse a feature CSV into sorted per-agent ``(times, labels, features)``."""
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise CsvSchemaError(f"cannot open feature file {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise CsvSchemaError(f"{path}: empty file, header row required")
        header = [h.strip() for h in header]
        if tuple(header[:3]) != _CSV_HEAD:
            raise CsvSchemaError(f"{path}: header must start with t,agent,label")
        dim = len(header) - 3
        if dim < 1 or header[3:] != [f"z_{k}" for k in range(dim)]:
            raise CsvSchemaError(f"{path}: feature columns must be z_0..z_{{n-1}}")
        if n is not None and dim != n:
            raise CsvSchemaError(f"{path}: found {dim} feature columns, config says n={n}")
        rows = {a: [] for a in range(agents)}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvSchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                t = float(row[0])
                agent = int(row[1])
                label = float(row[2])
                z = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise CsvSchemaError(f"{path}:{lineno}: {exc}") from exc
            if agent not in rows:
                raise CsvSchemaError(f"{path}:{lineno}: agent {agent} outside [0, {agents})")
            if label not in (-1.0, 1.0):
                raise CsvSchemaError(f"{path}:{lineno}: label must be -1 or +1, got {row[2]}")
            if not (math.isfinite(t) and all(math.isfinite(v) for v in z)):
                raise CsvSchemaError(f"{path}:{lineno}: non-finite value")
            rows[agent].append((t, int(label), z))
    out = {}
    for agent, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        ts = np.array([e[0] for e in entries])
        if ts.size == 0 or ts[0] > 0:
            raise CsvSchemaError(f"{path}: agent {agent} has no sample at or before t=0")
        if np.any(np.diff(ts) == 0):
            raise CsvSchemaError(f"{path}: agent {agent} has duplicate timestamps")
        out[agent] = (
            ts,
            np.array([e[1] for e in entries], dtype=np.int8),
            np.array([e[2] for e in entries], dtype=float),
        )
    return out, dim


def csv_feature_stream(params: dict):
    """Zero-order hold of CSV samples onto the simulation grid."""
    if params["path"] is None:
        raise ScenarioError("parameter path is required for sparse_classifier_csv")
    N, T, dt = params["agents"], float(params["horizon"]), float(params["time_step"])
    data, dim = read_feature_csv(params["path"], N, params["n"])
    params["n"] = dim
    K = int(round(T / dt))
    times = np.arange(K + 1) * dt
    feats = np.empty((K + 1, N, dim))
    labels = np.empty((K + 1, N), dtype=np.int8)
    for agent, (ts, ys, zs) in data.items():
        pick = np.searchsorted(ts, times + 1e-12, side="right") - 1
        feats[:, agent] = zs[pick]
        labels[:, agent] = ys[pick]
    stream = FeatureStream(dt=dt, features=feats, labels=labels)

    holdout = None
    if params["holdout_path"] is not None:
        hdata, hdim = read_feature_csv(params["holdout_path"], N)
        if hdim != dim:
            raise CsvSchemaError("holdout feature dimension differs from the training stream")
        holdout = HoldoutSet(
            np.concatenate([v[2] for v in hdata.values()]),
            np.concatenate([v[1] for v in hdata.values()]),
        )
    return stream, holdout


class StreamClassifier(ProblemSpec):
    """Sparse classifier learning over feature streams.

    ``formulation='constrained'``: cost ``||x||_1 / N`` and constraint
    ``log(1 + exp(-y <x, z>)) - delta``.
    ``formulation='regularized'``: cost ``logistic + alpha ||x||_1``, no constraints.
    """

    name = "sparse_classifier"

    def __init__(self, params, stream: FeatureStream, holdout: HoldoutSet | None, witness):
        N, n, B = params["agents"], params["n"], float(params["box_bound"])
        if stream.features.shape[1:] != (N, n):
            raise ScenarioError("feature stream shape does not match agents and n")
        self.stream = stream
        self.holdout = holdout
        self.delta = float(params["delta"])
        self.formulation = params["formulation"]
        if self.formulation not in ("constrained", "regularized"):
            raise ScenarioError("parameter formulation must be constrained or regularized")
        self.alpha = float(params["alpha"])
        constrained = self.formulation == "constrained"
        action_set = box(-B * np.ones(n), B * np.ones(n))
        zmax = float(np.linalg.norm(stream.features, axis=-1).max())
        bound = np.maximum(np.abs(action_set.lower), np.abs(action_set.upper))
        zl1 = float((np.abs(stream.features) @ bound).max())
        if constrained:
            L0, Lf = math.sqrt(n) / N, zmax
            # min over the product set is 0, sum of costs at x* is ||x*||_1
            K = action_set.max_l1_norm()
        else:
            L0, Lf = zmax + self.alpha * math.sqrt(n), 1.0
            K = N * (float(softplus(zl1)) + self.alpha * action_set.max_l1_norm())
        if witness is not None and not action_set.contains(witness):
            witness = None
        super().__init__(
            action_dim=n,
            agent_count=N,
            constraint_counts=[1 if constrained else 0] * N,
            action_set=action_set,
            horizon=params["horizon"],
            time_step=params["time_step"],
            gamma=params["gamma"],
            lipschitz_cost=L0,
            lipschitz_constraint=Lf,
            cost_floor_gap=K,
            feasible_witness=witness if constrained else None,
            regularizer_weight=None if constrained else self.alpha,
            params=params,
        )
        if stream.step_count < self.step_count():
            raise ScenarioError("feature stream is shorter than the horizon")

    @property
    def constrained(self) -> bool:
        return self.formulation == "constrained"

    def _at(self, t):
        k = self.stream.index(t)
        return self.stream.features[k], self.stream.labels[k].astype(float)

    def _idx(self, agents):
        return np.arange(self.agent_count) if agents is None else np.asarray(agents, dtype=np.intp)

    def cost_matrix(self, t, points):
        pts = np.asarray(points, float)
        l1 = np.abs(pts).sum(axis=1)
        if self.constrained:
            return np.broadcast_to(l1 / self.agent_count, (self.agent_count, len(pts))).copy()
        z, y = self._at(t)
        margins = y[:, None] * (z @ pts.T)
        return softplus(-margins) + self.alpha * l1[None, :]

    def constraint_matrix(self, t, points):
        if not self.constrained:
            return np.empty((0, len(points)))
        z, y = self._at(t)
        margins = y[:, None] * (z @ np.asarray(points, float).T)
        return softplus(-margins) - self.delta

    def _own_margins(self, t, X, idx):
        z, y = self._at(t)
        return z[idx], y[idx], y[idx] * (z[idx] * X[idx]).sum(axis=1)

    def own_costs(self, t, X, agents=None):
        idx = self._idx(agents)
        l1 = np.abs(X[idx]).sum(axis=1)
        if self.constrained:
            return l1 / self.agent_count
        _, _, m = self._own_margins(t, X, idx)
        return softplus(-m) + self.alpha * l1

    def own_cost_subgradients(self, t, X, agents=None):
        idx = self._idx(agents)
        # sign(0) = 0: the minimal-norm element of the l1 subdifferential
        if self.constrained:
            return np.sign(X[idx]) / self.agent_count
        z, y, m = self._own_margins(t, X, idx)
        return (-y * sigmoid(-m))[:, None] * z + self.alpha * np.sign(X[idx])

    def own_constraint_values(self, t, X, agents=None):
        if not self.constrained:
            return np.empty(0)
        _, _, m = self._own_margins(t, X, self._idx(agents))
        return softplus(-m) - self.delta

    def own_constraint_jacobians(self, t, X, agents=None):
        if not self.constrained:
            return np.empty((0, self.action_dim))
        z, y, m = self._own_margins(t, X, self._idx(agents))
        return (-y * sigmoid(-m))[:, None] * z

    def cost_series(self, times, x):
        x = np.asarray(x, float)
        if self.constrained:
            return np.full(len(times), np.abs(x).sum())
        k = self.stream.index(np.asarray(times, float))
        z, y = self.stream.features[k], self.stream.labels[k].astype(float)
        m = y * (z @ x)
        return softplus(-m).sum(axis=1) + self.agent_count * self.alpha * np.abs(x).sum()

    def cost_subgradient_series(self, times, x):
        x = np.asarray(x, float)
        if self.constrained:
            return np.broadcast_to(np.sign(x), (len(times), self.action_dim)).copy()
        k = self.stream.index(np.asarray(times, float))
        z, y = self.stream.features[k], self.stream.labels[k].astype(float)
        w = -y * sigmoid(-y * (z @ x))
        return (w[..., None] * z).sum(axis=1) + self.agent_count * self.alpha * np.sign(x)

    def constraint_series(self, times, x):
        if not self.constrained:
            return np.empty((len(times), 0))
        k = self.stream.index(np.asarray(times, float))
        z, y = self.stream.features[k], self.stream.labels[k].astype(float)
        return softplus(-y * (z @ np.asarray(x, float))) - self.delta

    def constraint_jacobian_series(self, times, x):
        if not self.constrained:
            return np.empty((len(times), 0, self.action_dim))
        k = self.stream.index(np.asarray(times, float))
        z, y = self.stream.features[k], self.stream.labels[k].astype(float)
        w = -y * sigmoid(-y * (z @ np.asarray(x, float)))
        return w[..., None] * z

    def _cost(self, i, t, x):
        return float(self.cost_matrix(t, np.asarray(x, float)[None])[i, 0])

    def _constraints(self, i, t, x):
        return self.constraint_matrix(t, np.asarray(x, float)[None])[self.agent_rows(i), 0]

    def _cost_subgradient(self, i, t, x):
        X = np.zeros((self.agent_count, self.action_dim))
        X[i] = x
        return self.own_cost_subgradients(t, X, agents=[i])[0]

    def _constraint_jacobian(self, i, t, x):
        X = np.zeros((self.agent_count, self.action_dim))
        X[i] = x
        return self.own_constraint_jacobians(t, X, agents=[i])
