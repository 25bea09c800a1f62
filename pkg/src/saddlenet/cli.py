"""Command line: ``saddlenet run|oracle|report``.

Exit status is 0 on success.  Failures print one machine-parsable line to
stderr, ``ERROR kind=<kind> ...``, and exit with

    2  invalid configuration      3  non-finite state
    4  missing or corrupt run artifacts      5  oracle failure
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import metrics as M
from .config import ConfigError, RunConfig, load_config
from .dynamics import EngineError, NonFiniteError, run
from .graph import diameter
from .oracle import NoFeasiblePoint, OracleError, dump_result, load_result, solve
from .problem import ProblemError, witness_violation
from .scenarios import make_scenario

TRAJECTORY = "trajectory.csv"
METRICS = "metrics.csv"
ORACLE = "oracle.out"
BOUNDS = "bounds.txt"
WARNINGS = "warnings.txt"


class ArtifactError(RuntimeError):
    def __init__(self, name: str, message: str):
        self.name = name
        super().__init__(f"{name}: {message}")


def _fmt(v) -> str:
    return repr(float(v))


# building blocks ---------------------------------------------------------------------------

def build(cfg: RunConfig, workers: int = 1):
    try:
        p, _ = make_scenario(cfg.scenario_name, cfg.scenario, cfg.seed)
    except ProblemError as exc:
        raise ConfigError("scenario", str(exc)) from None
    g = cfg.build_graph()
    try:
        ecfg = cfg.engine_config(p, workers=workers)
        if ecfg.initial_x is not None:
            np.broadcast_to(ecfg.initial_x, (p.agent_count, p.action_dim))
        for label, arr, size in (
            ("initial_lambda", ecfg.initial_lambda, p.constraint_total),
            ("initial_mu", ecfg.initial_mu, g.slot_count),
        ):
            if arr is not None and np.asarray(arr).size != size:
                raise ConfigError(f"engine.{label}", f"needs {size} entries")
    except (EngineError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("engine", str(exc)) from None
    return p, g, ecfg


def compute_oracle(cfg: RunConfig, p):
    o = cfg.oracle
    kw = {}
    if o["method"] in ("subgradient", "auto") and o["step_scale"] is not None:
        kw["step_scale"] = o["step_scale"]
    method = o["method"]
    if method == "auto":
        method = "grid" if p.action_set.kind == "box" and p.action_dim <= 2 else "subgradient"
        if method == "grid":
            kw.pop("step_scale", None)
    return solve(p, method, resolution=o["resolution"], iterations=o["iterations"], **kw)


def oracle_context(cfg: RunConfig, p, g, ecfg) -> dict:
    return {
        "scenario": cfg.scenario_name,
        "agents": p.agent_count,
        "action_dim": p.action_dim,
        "constraint_counts": list(p.constraint_counts),
        "diameter": diameter(g),
        "K": p.cost_floor_gap,
        "gamma": p.gamma,
        "epsilon": ecfg.epsilon,
        "L0": p.lipschitz_cost,
        "Lf": p.lipschitz_constraint,
        "step": ecfg.step,
        "horizon": ecfg.horizon,
        "delta": cfg.metrics["delta"],
        "checkpoints": cfg.metrics["checkpoints"],
        "edges": [[int(a), int(b)] for a, b in zip(g.slot_src, g.slot_dst)],
    }


def collect_warnings(cfg: RunConfig, p, ecfg) -> list[str]:
    out = []
    if ecfg.epsilon <= 0.5:
        out.append(f"epsilon={ecfg.epsilon} <= 1/2: the fit bound does not apply")
    for label, arr in (("lambda", ecfg.initial_lambda), ("mu", ecfg.initial_mu)):
        if arr is not None and np.any(np.asarray(arr) != 0):
            out.append(f"initial {label} is nonzero: disagreement and regret bounds are not reported")
    wv = witness_violation(p)
    if wv is None:
        if p.constraint_total:
            out.append("scenario declares no feasible witness")
    elif wv >= 0:
        out.append(f"feasible witness violates a sampled constraint (max {wv:.6g})")
    return out


# CSV export ----------------------------------------------------------------------------------

def trajectory_header(p, g) -> list[str]:
    cols = ["t"]
    cols += [f"x_{i}_{d}" for i in range(p.agent_count) for d in range(p.action_dim)]
    cols += [f"lam_{p.constraint_owner[r]}_{r - p.constraint_offsets[p.constraint_owner[r]]}" for r in range(p.constraint_total)]
    cols += [f"mu_{a}_{b}" for a, b in zip(g.slot_src, g.slot_dst)]
    return cols


def metrics_header(p, has_heldout: bool) -> list[str]:
    N = p.agent_count
    pairs = M.pair_list(N)
    cols = ["t"]
    cols += [f"norm_x_{i}" for i in range(N)]
    cols += [f"dist_{i}_{j}" for i, j in pairs]
    cols += [f"disagreement_{i}_{j}" for i, j in pairs]
    fit_cols = [(i, j, k) for i in range(N) for j in range(N) for k in range(p.constraint_counts[j])]
    cols += [f"fit_{i}_{j}_{k}" for i, j, k in fit_cols]
    cols += [f"satfit_{i}_{j}_{k}" for i, j, k in fit_cols]
    cols += [f"regret_{i}" for i in range(N)]
    cols += ["energy", "max_multiplier"]
    if has_heldout:
        cols += [f"heldout_error_{i}" for i in range(N)]
    return cols


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_trajectory(path: Path, log: M.TrajectoryLog) -> None:
    p, g = log.problem, log.graph
    rows = []
    for s in log.states:
        rows.append([_fmt(s.t)] + [_fmt(v) for v in s.x.ravel()] + [_fmt(v) for v in s.lam] + [_fmt(v) for v in s.mu])
    _write_csv(path, trajectory_header(p, g), rows)


def write_metrics(path: Path, log: M.TrajectoryLog, xstar) -> None:
    p = log.problem
    N = p.agent_count
    pairs = np.array(M.pair_list(N), dtype=np.intp).reshape(-1, 2)
    rows_idx = [(i, j, k) for i in range(N) for j in range(N) for k in range(p.constraint_counts[j])]
    fi = np.array([i for i, _, _ in rows_idx], dtype=np.intp)
    fr = np.array([p.constraint_offsets[j] + k for _, j, k in rows_idx], dtype=np.intp)
    delta = log.config.saturation_deltas[0]
    bench = M.benchmark_cost_integral(p, xstar, int(log.record_steps[-1]))
    ref_x = np.broadcast_to(np.asarray(xstar, float), (N, p.action_dim))
    zl, zm = np.zeros(p.constraint_total), np.zeros(log.graph.slot_count)
    rows = []
    for r, s in enumerate(log.states):
        X = s.x
        d = X[pairs[:, 0]] - X[pairs[:, 1]] if len(pairs) else np.zeros((0, p.action_dim))
        row = [_fmt(s.t)]
        row += [_fmt(v) for v in np.linalg.norm(X, axis=1)]
        row += [_fmt(v) for v in np.sqrt((d * d).sum(axis=1))]
        row += [_fmt(v) for v in log.disagreement[r]]
        row += [_fmt(v) for v in log.fit[r][fi, fr]]
        row += [_fmt(v) for v in log.saturated[delta][r][fi, fr]]
        row += [_fmt(v) for v in log.total_cost[r] - bench[int(log.record_steps[r])]]
        row += [_fmt(M.energy(s, ref_x, zl, zm)), _fmt(log.max_multiplier[int(log.record_steps[r])])]
        if log.heldout_error is not None:
            row += [_fmt(v) for v in log.heldout_error[r]]
        rows.append(row)
    _write_csv(path, metrics_header(p, log.heldout_error is not None), rows)


# bound report (CSV-only recompute) -------------------------------------------------------------

def _read_csv(path: Path):
    if not path.is_file():
        raise ArtifactError(path.name, "file is missing")
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        data = np.array([[float(v) for v in row] for row in body], dtype=float).reshape(len(body), len(header))
    except (IndexError, ValueError) as exc:
        raise ArtifactError(path.name, f"corrupt CSV ({exc})") from None
    if len(body) == 0:
        raise ArtifactError(path.name, "no data rows")
    return {name: data[:, q] for q, name in enumerate(header)}, header


def _g(v) -> str:
    if isinstance(v, str):
        return v
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    return f"{float(v):.6g}"


def report(run_dir) -> str:
    """Bound report text recomputed from ``trajectory.csv``, ``metrics.csv`` and ``oracle.out``."""
    run_dir = Path(run_dir)
    traj, _ = _read_csv(run_dir / TRAJECTORY)
    met, header = _read_csv(run_dir / METRICS)
    if not (run_dir / ORACLE).is_file():
        raise ArtifactError(ORACLE, "file is missing")
    try:
        res, ctx = load_result(run_dir / ORACLE)
        N, n = int(ctx["agents"]), int(ctx["action_dim"])
        counts = [int(c) for c in ctx["constraint_counts"]]
        D, K, gamma, eps = ctx["diameter"], ctx["K"], ctx["gamma"], ctx["epsilon"]
        L0, checkpoints = ctx["L0"], [float(c) for c in ctx["checkpoints"]]
    except (KeyError, ValueError, TypeError) as exc:
        raise ArtifactError(ORACLE, f"corrupt ({exc})") from None

    t = met["t"]
    try:
        x0 = np.array([[traj[f"x_{i}_{d}"][0] for d in range(n)] for i in range(N)])
        mult0 = [traj[c][0] for c in traj if c.startswith("lam_") or c.startswith("mu_")]
    except KeyError as exc:
        raise ArtifactError(TRAJECTORY, f"missing column {exc}") from None
    xstar = res.xstar
    gap = float(((x0 - xstar) ** 2).sum())
    zero_start = all(v == 0.0 for v in mult0)
    pairs = M.pair_list(N)

    def col(name):
        if name not in met:
            raise ArtifactError(METRICS, f"missing column {name}")
        return met[name]

    def row_at(T):
        hits = np.flatnonzero(np.abs(t - T) <= 1e-9 * max(1.0, abs(T)))
        if hits.size == 0:
            raise ArtifactError(METRICS, f"no row at checkpoint t={T}")
        return int(hits[0])

    lines = []
    lines.append("bound report")
    lines.append(f"scenario {ctx.get('scenario')}  agents {N}  dim {n}  diameter {D}")
    lines.append(
        "constants  " + "  ".join(
            f"{k}={_g(ctx[k])}" for k in ("epsilon", "gamma", "K", "L0", "Lf", "step", "horizon", "delta")
        )
    )
    lines.append(
        f"benchmark  method={res.method}  x*=[{', '.join(_g(v) for v in xstar)}]  "
        f"objective={_g(res.objective_integral)}  worst_violation={_g(res.worst_violation)}  "
        f"|x*-x(0)|^2={_g(gap)}"
    )
    if not zero_start:
        lines.append("initial multipliers are nonzero: disagreement and regret bounds not applicable")
    lines.append("")
    lines.append(
        f"{'T':>10} {'disagree':>12} {'dis_bound':>12} {'ok':>3} {'regret':>12} {'reg_bound':>12} {'ok':>3}"
        f" {'own_fit+':>12} {'fit_bound':>12} {'ok':>3}"
    )
    ratio_rows = []
    for T in checkpoints:
        r = row_at(T)
        dis = max((col(f"disagreement_{i}_{j}")[r] for i, j in pairs), default=0.0)
        reg = max(col(f"regret_{i}")[r] for i in range(N))
        own = 0.0
        pos = 0.0
        satpos = 0.0
        for i in range(N):
            comps = [col(f"fit_{i}_{i}_{k}")[r] for k in range(counts[i])]
            own = max(own, math.sqrt(sum(max(c, 0.0) ** 2 for c in comps)))
            for j in range(N):
                for k in range(counts[j]):
                    pos = max(pos, col(f"fit_{i}_{j}_{k}")[r])
                    satpos = max(satpos, col(f"satfit_{i}_{j}_{k}")[r])
        if zero_start:
            db = M.disagreement_bound_value(D, K, gamma, eps, gap, T)
            rb = M.regret_bound_value(N, L0, D, K, gamma, eps, gap, T)
        else:
            db = rb = float("nan")
        fb = M.fit_norm_bound_value(K, eps, gap, T)
        ok = lambda a, b: "n/a" if math.isnan(b) else ("yes" if a <= b else "NO")
        lines.append(
            f"{_g(T):>10} {_g(dis):>12} {_g(db):>12} {ok(dis, db):>3} {_g(reg):>12} {_g(rb):>12} {ok(reg, rb):>3}"
            f" {_g(own):>12} {_g(fb):>12} {ok(own, fb):>3}"
        )
        ratio_rows.append((T, dis, reg, max(pos, 0.0), max(satpos, 0.0)))
    lines.append("")
    lines.append("sublinearity ratios, value / sqrt(T)")
    lines.append(f"{'T':>10} {'disagree':>12} {'regret':>12} {'fit+':>12} {'satfit+':>12}")
    for T, dis, reg, pos, sat in ratio_rows:
        f = (lambda v: M.sublinearity_ratio(v, T))
        lines.append(f"{_g(T):>10} {_g(f(dis)):>12} {_g(f(reg)):>12} {_g(f(pos)):>12} {_g(f(sat)):>12}")
    lines.append("")
    if pairs:
        dist = np.max([col(f"dist_{i}_{j}") for i, j in pairs], axis=0)
        k = int(np.argmax(dist))
        peak = float(dist[k])
        final = float(dist[-1])
        rel = final / peak if peak > 0 else 0.0
        lines.append(
            f"max pairwise distance  initial={_g(dist[0])}  peak={_g(peak)} at t={_g(t[k])}  "
            f"final={_g(final)}  final/peak={_g(rel)}"
        )
        trend = "decreasing" if final < peak else "not decreasing"
        lines.append(f"disagreement after its peak: {trend}")
    if "heldout_error_0" in met:
        errs = np.array([col(f"heldout_error_{i}")[-1] for i in range(N)])
        lines.append(f"held-out error at T  max={_g(errs.max())}  mean={_g(errs.mean())}")
    return "\n".join(lines) + "\n"


# commands ----------------------------------------------------------------------------------------

def _say(quiet: bool, msg: str) -> None:
    if not quiet:
        print(msg)


def _warn(quiet: bool, msgs) -> None:
    if not quiet:
        for m in msgs:
            print(f"warning: {m}", file=sys.stderr)


def cmd_run(config_path, workers: int = 1, quiet: bool = False) -> int:
    cfg = load_config(config_path)
    p, g, ecfg = build(cfg, workers)
    warnings = collect_warnings(cfg, p, ecfg)
    result = compute_oracle(cfg, p)
    if p.constraint_total and result.worst_violation > 1e-6:
        warnings.append(f"oracle point violates a sampled constraint (max {result.worst_violation:.6g})")
    _warn(quiet, warnings)
    log = run(p, g, ecfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(out / TRAJECTORY, log)
    write_metrics(out / METRICS, log, result.xstar)
    dump_result(result, out / ORACLE, oracle_context(cfg, p, g, ecfg))
    text = report(out)
    (out / BOUNDS).write_text(text, encoding="utf-8")
    (out / WARNINGS).write_text("".join(f"{w}\n" for w in warnings), encoding="utf-8")
    _say(quiet, text.rstrip("\n"))
    _say(quiet, f"wrote {out}")
    return 0


def cmd_oracle(config_path, workers: int = 1, quiet: bool = False) -> int:
    cfg = load_config(config_path)
    p, g, ecfg = build(cfg, workers)
    result = compute_oracle(cfg, p)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    dump_result(result, out / ORACLE, oracle_context(cfg, p, g, ecfg))
    _say(quiet, f"method={result.method} x*={[float(v) for v in result.xstar]} "
                f"objective={result.objective_integral!r} worst_violation={result.worst_violation!r}")
    return 0


def cmd_report(run_dir, workers: int = 1, quiet: bool = False) -> int:
    text = report(run_dir)
    _say(quiet, text.rstrip("\n"))
    return 0


COMMANDS = {"run": cmd_run, "oracle": cmd_oracle, "report": cmd_report}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=1, help="threads for per-agent field evaluation")
    common.add_argument("--quiet", action="store_true", help="suppress console output")
    parser = argparse.ArgumentParser(prog="saddlenet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate and write all artifacts").add_argument("config")
    sub.add_parser("oracle", parents=[common], help="compute the benchmark only").add_argument("config")
    sub.add_parser("report", parents=[common], help="recompute the bound report from a run directory").add_argument("run_dir")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    target = args.config if args.command in ("run", "oracle") else args.run_dir
    if args.workers < 1:
        print('ERROR kind=usage field=workers line=? msg="workers must be positive"', file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](target, workers=args.workers, quiet=args.quiet)
    except ConfigError as exc:
        print(exc.machine_line(), file=sys.stderr)
        return 2
    except NonFiniteError as exc:
        print(f'ERROR kind=nonfinite step={exc.step_index} msg="{exc}"', file=sys.stderr)
        return 3
    except ArtifactError as exc:
        print(f'ERROR kind=artifact file={exc.name} msg="{exc}"', file=sys.stderr)
        return 4
    except NoFeasiblePoint as exc:
        print(f'ERROR kind=oracle msg="{exc}"', file=sys.stderr)
        return 5
    except OracleError as exc:
        print(f'ERROR kind=oracle msg="{exc}"', file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
