"""Command-line front end.

Subcommands::

    gcflight allocate --mg 0,0,9.8 --mad 20,20,0 --set ball:15 [--mode lex|weighted]
    gcflight simulate --config FILE [--config FILE ...] [--out DIR] [--fault-override SPEC]
    gcflight mpc --config FILE --viewpoint impulse|energy [--out DIR]

Exit codes: 0 success, 2 malformed flags or config, 3 infeasible feasible set,
4 integration failure (partial log written), 5 horizon solver not converged
(trace written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .alloc import AllocProblem, solve_lexicographic, solve_weighted_disturbed
from .config import (ConfigError, bundled_config, config_hash, horizon_from_dict, load_scenario,
                     parse_set, read_document)
from .core import DomainError, InfeasibleSetError
from .horizon import cost_terms, solve_horizon
from .sim import SimLog, compute_metrics, run_scenario

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_INTEGRATION, EXIT_NOT_CONVERGED = 0, 2, 3, 4, 5
OUT_ENV = "GCF_OUT_DIR"
LOG_SCHEMA = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _triple(text: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    if len(vals) != 3 or not all(np.isfinite(vals)):
        raise argparse.ArgumentTypeError(f"expected three finite numbers, got {text!r}")
    return np.array(vals)


def _num(x: float) -> str:
    return format(float(x) + 0.0, ".17g")   # + 0.0 folds -0 into 0


def _vec_json(v) -> list:
    return [float(x) for x in v]


# ---------------------------------------------------------------------------
# allocate
# ---------------------------------------------------------------------------

def cmd_allocate(args) -> int:
    F = parse_set(args.set)
    d = args.dist
    if d is not None and not np.any(d):
        d = None            # a zero disturbance is the undisturbed problem
    kw = {}
    if args.wg is not None:
        kw["w_g"] = args.wg
    if args.wt is not None:
        kw["w_t"] = args.wt
    # m = 1 with g = mg makes the targets exactly the given force vectors
    prob = AllocProblem(m=1.0, a_d=args.mad, F=F, g=args.mg, d=d, **kw)
    if args.mode == "weighted" and not prob.w_g > prob.w_t > 0:
        raise ConfigError("weighted mode needs w_g > w_t > 0")
    alloc = solve_lexicographic(prob) if args.mode == "lex" else solve_weighted_disturbed(prob)
    out = {
        "mode": args.mode,
        "f_g_star": _vec_json(alloc.f_g_star),
        "f_t_star": _vec_json(alloc.f_t_star),
        "f_d": _vec_json(alloc.f_d),
        "norm_f_t_star": float(np.linalg.norm(alloc.f_t_star)),
        "residuals": alloc.residuals(prob),
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def log_header(n_u: int) -> list[str]:
    cols = ["t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz"]
    cols += [f"u{i + 1}" for i in range(n_u)]
    cols += [f"{f}{a}" for f in ("fg", "ft", "fd") for a in "xyz"]
    cols += ["cost_g", "cost_t", "cost_e", "fault"]
    return cols


def write_log_csv(log: SimLog, path: Path) -> None:
    lines = [",".join(log_header(log.n_controls))]
    for k in range(len(log)):
        row = [log.t[k], *log.x[k], *log.u[k], *log.f_g[k], *log.f_t[k], *log.f_d[k], *log.cost[k]]
        lines.append(",".join(_num(v) for v in row) + f",{int(log.fault[k])}")
    path.write_text("\n".join(lines) + "\n")


def _resolve_config(text: str) -> Path:
    if text.startswith("bundled:"):
        return bundled_config(text.split(":", 1)[1])
    return Path(text)


def _run_one(config_path: str, out_dir: str, fault_override: str | None) -> tuple[int, str]:
    path = _resolve_config(config_path)
    cfg, raw = load_scenario(path, fault_override)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = run_scenario(cfg)
    write_log_csv(log, out / "log.csv")
    metrics = compute_metrics(log, cfg).to_dict()
    metrics.update(status=log.status, touchdown_time=log.touchdown_time,
                   controller_calls=log.controller_calls, nonconverged=log.nonconverged,
                   error=log.error)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    manifest = {
        "config_path": str(path),
        "config_sha256": config_hash(raw),
        "fault_override": fault_override,
        "out_dir": str(out),
        "artifacts": ["log.csv", "metrics.json"],
        "log_schema": LOG_SCHEMA,
        "package_version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    code = EXIT_INTEGRATION if log.status == "integration-error" else EXIT_OK
    return code, f"{cfg.name}: {log.status}, {len(log)} rows -> {out}"


def _default_out(args) -> Path:
    if args.out is not None:
        return Path(args.out)
    env = os.environ.get(OUT_ENV)
    if env:
        return Path(env)
    raise ConfigError(f"no output directory: pass --out or set {OUT_ENV}")


def cmd_simulate(args) -> int:
    base = _default_out(args)
    jobs = []
    for i, c in enumerate(args.config):
        # one directory per scenario when several run together
        out = base if len(args.config) == 1 else base / f"{i:02d}_{_resolve_config(c).stem}"
        jobs.append((c, str(out), args.fault_override))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*j) for j in jobs]
    for _, msg in results:
        print(msg)
    return max(code for code, _ in results)


# ---------------------------------------------------------------------------
# mpc (horizon problem)
# ---------------------------------------------------------------------------

def cmd_mpc(args) -> int:
    path = _resolve_config(args.config)
    doc, raw = read_document(path)
    prob, max_iter = horizon_from_dict(doc, args.viewpoint)
    sol = solve_horizon(prob, max_iter=max_iter)
    out = _default_out(args)
    out.mkdir(parents=True, exist_ok=True)
    trace = ["iteration,objective"] + [f"{i},{_num(v)}" for i, v in enumerate(sol.trace)]
    (out / "trace.csv").write_text("\n".join(trace) + "\n")
    cols = ["node"] + [f"{f}{a}" for f in ("fg", "ft", "fd") for a in "xyz"]
    rows = [",".join(cols)]
    for k in range(sol.N):
        rows.append(",".join([str(k)] + [_num(v) for v in (*sol.f_g[k], *sol.f_t[k], *sol.f_d[k])]))
    (out / "schedule.csv").write_text("\n".join(rows) + "\n")
    terms = cost_terms(sol, prob)
    result = {
        "viewpoint": args.viewpoint,
        "objective": sol.objective,
        "terms": {"gravity": terms[0], "tracking": terms[1], "energy": terms[2]},
        "iterations": sol.iterations,
        "converged": sol.converged,
        "node0_f_d": _vec_json(sol.f_d[0]),
        "config_sha256": config_hash(raw),
        "metadata": {k: v for k, v in sol.metadata.items() if isinstance(v, (str, int, float, bool))},
    }
    (out / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    manifest = {
        "config_path": str(path),
        "config_sha256": config_hash(raw),
        "out_dir": str(out),
        "artifacts": ["trace.csv", "schedule.csv", "result.json"],
        "log_schema": LOG_SCHEMA,
        "package_version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"objective": sol.objective, "converged": sol.converged, "out": str(out)}))
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gcflight", description="Gravity-compensation-first allocation and simulation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("allocate", help="static force allocation")
    a.add_argument("--mg", type=_triple, required=True, help="gravity force m*g as x,y,z (N)")
    a.add_argument("--mad", type=_triple, required=True, help="m*a_d as x,y,z (N)")
    a.add_argument("--set", required=True, help="ball:r | box:lx,ly,lz..hx,hy,hz, joined with & to intersect")
    a.add_argument("--mode", choices=("lex", "weighted"), default="lex")
    a.add_argument("--wg", type=float)
    a.add_argument("--wt", type=float)
    a.add_argument("--dist", type=_triple, help="disturbance force d as x,y,z (N)")
    a.set_defaults(func=cmd_allocate)

    s = sub.add_parser("simulate", help="run closed-loop scenarios")
    s.add_argument("--config", action="append", required=True,
                   help="scenario JSON (repeatable); 'bundled:<name>' selects a shipped config")
    s.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    s.add_argument("--fault-override", help="none | motor:<i>@<onset> | wing-loss@<onset>")
    s.add_argument("--jobs", "--batch", dest="jobs", type=int, default=1,
                   help="parallel workers for several configs (one output directory each)")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("mpc", help="solve one receding-horizon problem")
    m.add_argument("--config", required=True)
    m.add_argument("--viewpoint", choices=("impulse", "energy"), required=True)
    m.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    m.set_defaults(func=cmd_mpc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except InfeasibleSetError as exc:
        print(f"error: infeasible set: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, DomainError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
