"""Run configuration: one TOML file describes one run and its output directory.

Every key is validated before any computation starts and unknown keys are
rejected.  Errors carry the dotted field name and, when it can be found, the
line of the offending key.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import graph as graphs
from .dynamics import EngineConfig, EngineError
from .problem import ProblemError
from .scenarios import DEFAULTS, SCENARIOS, scenario_params
from .seeding import substream

GRAPH_KINDS = ("cycle", "path", "complete", "star", "random_geometric", "edges")
INITIAL_POLICIES = ("zero", "random", "explicit")
ORACLE_METHODS = ("auto", "grid", "subgradient")

_SCHEMA = {
    "": {"output_dir", "seed", "graph", "scenario", "engine", "oracle", "metrics"},
    "graph": {"kind", "nodes", "radius", "seed", "edges", "names"},
    "engine": {
        "epsilon", "step", "horizon", "record_every", "coupling", "initial_state",
        "initial_scale", "initial_x", "initial_lambda", "initial_mu",
    },
    "oracle": {"method", "resolution", "iterations", "step_scale"},
    "metrics": {"delta", "checkpoints"},
}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str, line: int | None = None):
        self.field = field_name
        self.message = message
        self.line = line
        super().__init__(f"{field_name}: {message}")

    def machine_line(self) -> str:
        line = "?" if self.line is None else str(self.line)
        msg = self.message.replace('"', "'")
        return f'ERROR kind=config field={self.field} line={line} msg="{msg}"'


@dataclass
class RunConfig:
    path: Path
    output_dir: Path
    seed: int
    graph: dict
    scenario_name: str
    scenario: dict
    engine: dict
    oracle: dict
    metrics: dict
    text: str = field(repr=False, default="")

    def engine_config(self, p, workers: int = 1, keep_history: bool = False) -> EngineConfig:
        e = self.engine
        N, n = p.agent_count, p.action_dim
        init_x = None
        if e["initial_state"] == "random":
            s = e["initial_scale"]
            init_x = substream(self.seed, "initial_state").uniform(-s, s, size=(N, n))
        elif e["initial_state"] == "explicit":
            init_x = np.broadcast_to(np.asarray(e["initial_x"], float), (N, n)).copy()
        return EngineConfig(
            epsilon=e["epsilon"],
            step=e["step"],
            horizon=e["horizon"],
            record_every=e["record_every"],
            initial_x=init_x,
            initial_lambda=None if e["initial_lambda"] is None else np.asarray(e["initial_lambda"], float),
            initial_mu=None if e["initial_mu"] is None else np.asarray(e["initial_mu"], float),
            coupling=e["coupling"],
            saturation_deltas=(self.metrics["delta"],),
            workers=workers,
            keep_history=keep_history,
        )

    def build_graph(self) -> graphs.Graph:
        gc = self.graph
        kind, n = gc["kind"], gc["nodes"]
        if kind == "cycle":
            return graphs.cycle_graph(n)
        if kind == "path":
            return graphs.path_graph(n)
        if kind == "complete":
            return graphs.complete_graph(n)
        if kind == "star":
            return graphs.star_graph(n)
        if kind == "random_geometric":
            seed = gc["seed"]
            if seed is None:
                seed = int(substream(self.seed, "topology").integers(2**31))
            return graphs.random_geometric_graph(n, gc["radius"], seed)
        return graphs.build_graph(n, gc["edges"])


def _find_line(text: str, dotted: str) -> int | None:
    """Line of ``key`` inside its ``[section]``; best effort."""
    parts = dotted.split(".")
    key = parts[-1]
    section = ".".join(parts[:-1])
    current = ""
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return no
    if section:
        for no, raw in enumerate(text.splitlines(), start=1):
            if raw.strip() == f"[{section}]":
                return no
    return None


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError("config", f"parse error: {exc}", int(m.group(1)) if m else None) from None
    return parse_config(raw, text, path)


def parse_config(raw: dict, text: str = "", path: Path | str = "run.cfg") -> RunConfig:
    path = Path(path)

    def fail(name, msg):
        raise ConfigError(name, msg, _find_line(text, name))

    for section, keys in _SCHEMA.items():
        table = raw if section == "" else raw.get(section, {})
        if not isinstance(table, dict):
            fail(section, "must be a table")
        for k in table:
            if k not in keys:
                fail(f"{section}.{k}" if section else k, "unknown key")
    for req in ("scenario", "engine"):
        if req not in raw:
            fail(req, "missing section")

    seed = raw.get("seed", 0)
    if not _is_int(seed) or seed < 0:
        fail("seed", "must be a nonnegative integer")
    out = raw.get("output_dir", "out")
    if not isinstance(out, str) or not out:
        fail("output_dir", "must be a nonempty string")
    output_dir = (path.parent / out).resolve()

    # scenario
    sc = dict(raw["scenario"])
    name = sc.pop("name", None)
    if name not in SCENARIOS:
        fail("scenario.name", f"must be one of {', '.join(SCENARIOS)}")
    for k in sc:
        if k in ("horizon", "time_step"):
            fail(f"scenario.{k}", "set this in [engine] (horizon, step)")
        if k not in DEFAULTS[name]:
            fail(f"scenario.{k}", "unknown key")

    # engine
    e = raw["engine"]
    engine = {
        "epsilon": e.get("epsilon", 1.0),
        "step": e.get("step"),
        "horizon": e.get("horizon"),
        "record_every": e.get("record_every", 1),
        "coupling": e.get("coupling", "full"),
        "initial_state": e.get("initial_state", "zero"),
        "initial_scale": e.get("initial_scale", 1.0),
        "initial_x": e.get("initial_x"),
        "initial_lambda": e.get("initial_lambda"),
        "initial_mu": e.get("initial_mu"),
    }
    for k in ("epsilon", "step", "horizon"):
        v = engine[k]
        if v is None:
            fail(f"engine.{k}", "is required")
        if not _is_num(v):
            fail(f"engine.{k}", "must be a finite number")
    if not engine["epsilon"] > 0:
        fail("engine.epsilon", "epsilon must be positive")
    if not engine["step"] > 0:
        fail("engine.step", "step must be positive")
    if not engine["horizon"] >= 0:
        fail("engine.horizon", "horizon must be nonnegative")
    if not _is_int(engine["record_every"]) or engine["record_every"] < 1:
        fail("engine.record_every", "must be a positive integer")
    if engine["initial_state"] not in INITIAL_POLICIES:
        fail("engine.initial_state", f"must be one of {', '.join(INITIAL_POLICIES)}")
    if not _is_num(engine["initial_scale"]) or not engine["initial_scale"] > 0:
        fail("engine.initial_scale", "must be a positive number")
    if engine["initial_state"] == "explicit" and engine["initial_x"] is None:
        fail("engine.initial_x", "is required when initial_state = 'explicit'")
    if engine["initial_state"] != "explicit" and engine["initial_x"] is not None:
        fail("engine.initial_x", "only allowed when initial_state = 'explicit'")
    for k in ("initial_x", "initial_lambda", "initial_mu"):
        v = engine[k]
        if v is not None:
            try:
                arr = np.asarray(v, float)
            except (TypeError, ValueError):
                fail(f"engine.{k}", "must be a numeric array")
            if not np.all(np.isfinite(arr)):
                fail(f"engine.{k}", "must be finite")
            if k != "initial_x" and np.any(arr < 0):
                fail(f"engine.{k}", "multipliers must be nonnegative")
    try:
        EngineConfig(
            epsilon=engine["epsilon"], step=engine["step"], horizon=engine["horizon"],
            record_every=engine["record_every"], coupling=engine["coupling"],
        )
    except EngineError as exc:
        msg = str(exc)
        key = "coupling" if "coupling" in msg else "horizon"
        fail(f"engine.{key}", msg)

    try:
        params = scenario_params(name, {**sc, "horizon": float(engine["horizon"]), "time_step": float(engine["step"])})
    except ProblemError as exc:
        m = re.search(r"parameter (\w+)", str(exc))
        fail(f"scenario.{m.group(1)}" if m else "scenario", str(exc))

    # graph
    g = raw.get("graph", {})
    graph = {
        "kind": g.get("kind", "cycle"),
        "nodes": g.get("nodes", params["agents"]),
        "radius": g.get("radius", 0.4),
        "seed": g.get("seed"),
        "edges": g.get("edges"),
        "names": g.get("names"),
    }
    if graph["kind"] not in GRAPH_KINDS:
        fail("graph.kind", f"must be one of {', '.join(GRAPH_KINDS)}")
    if not _is_int(graph["nodes"]) or graph["nodes"] < 1:
        fail("graph.nodes", "must be a positive integer")
    if graph["nodes"] != params["agents"]:
        fail("graph.nodes", f"must equal scenario agents ({params['agents']})")
    if graph["kind"] == "random_geometric":
        if not _is_num(graph["radius"]) or not graph["radius"] > 0:
            fail("graph.radius", "must be a positive number")
        if graph["seed"] is not None and (not _is_int(graph["seed"]) or graph["seed"] < 0):
            fail("graph.seed", "must be a nonnegative integer")
    if graph["kind"] == "edges":
        edges = graph["edges"]
        if not isinstance(edges, list):
            fail("graph.edges", "must be a list of node pairs")
        names = graph["names"]
        if names is not None:
            if not isinstance(names, list) or len(set(names)) != len(names) or len(names) != graph["nodes"]:
                fail("graph.names", "must list one distinct name per node")
            index = {nm: i for i, nm in enumerate(names)}
            try:
                edges = [[index[a] for a in pair] for pair in edges]
            except (KeyError, TypeError):
                fail("graph.edges", "refers to an unknown node name")
        try:
            graph["edges"] = [(int(a), int(b)) for a, b in edges]
        except (TypeError, ValueError):
            fail("graph.edges", "must be a list of node pairs")
    try:
        RunConfig(path, output_dir, seed, graph, name, params, engine, {}, {}).build_graph()
    except graphs.GraphError as exc:
        fail("graph.edges" if graph["kind"] == "edges" else "graph", str(exc))

    # oracle
    o = raw.get("oracle", {})
    oracle = {
        "method": o.get("method", "auto"),
        "resolution": o.get("resolution", 201),
        "iterations": o.get("iterations", 2000),
        "step_scale": o.get("step_scale"),
    }
    if oracle["method"] not in ORACLE_METHODS:
        fail("oracle.method", f"must be one of {', '.join(ORACLE_METHODS)}")
    if not _is_int(oracle["resolution"]) or oracle["resolution"] < 2:
        fail("oracle.resolution", "must be an integer >= 2")
    if not _is_int(oracle["iterations"]) or oracle["iterations"] < 0:
        fail("oracle.iterations", "must be a nonnegative integer")
    if oracle["step_scale"] is not None and (not _is_num(oracle["step_scale"]) or not oracle["step_scale"] > 0):
        fail("oracle.step_scale", "must be a positive number")
    if oracle["method"] == "grid" and params["n"] is not None and params["n"] > 3:
        fail("oracle.method", "grid oracle needs an action dimension <= 3")

    # metrics
    m = raw.get("metrics", {})
    metrics = {"delta": m.get("delta", params.get("delta", 0.001)), "checkpoints": m.get("checkpoints")}
    if not _is_num(metrics["delta"]) or not metrics["delta"] > 0:
        fail("metrics.delta", "must be a positive number")
    T, h, every = engine["horizon"], engine["step"], engine["record_every"]
    if metrics["checkpoints"] is None:
        metrics["checkpoints"] = _default_checkpoints(T, h, every)
    cps = metrics["checkpoints"]
    if not isinstance(cps, list) or not all(_is_num(c) for c in cps):
        fail("metrics.checkpoints", "must be a list of times")
    for c in cps:
        k = c / h
        if not (0 <= c <= T + 1e-9) or abs(k - round(k)) > 1e-6 or (round(k) % every and abs(c - T) > 1e-9):
            fail("metrics.checkpoints", f"checkpoint {c} is not a recorded time")
    metrics["checkpoints"] = [float(c) for c in cps]

    return RunConfig(path, output_dir, seed, graph, name, params, engine, oracle, metrics, text)


def _default_checkpoints(T: float, h: float, every: int) -> list[float]:
    """Up to five recorded times spread over the horizon, always ending at ``T``."""
    K = int(round(T / h))
    if K == 0:
        return [0.0]
    ks = {(K * q) // 5 for q in range(1, 6)}
    ks = {k - k % every for k in ks}
    ks = {k for k in ks if k > 0} | {K}
    return [T if k == K else k * h for k in sorted(ks)]
