"""Command-line entry point: ``levybsde {discretize,solve,converge,stability,validate}``.

Exit status is 0 when every check passes, 1 when any fails and 2 on a
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .. import __version__
from ..discretize import build_law, lift_driver
from ..solver import backward_solve
from ..errors import ConfigError, ContractionViolation, LevyBSDEError
from .config import ExperimentConfig, load_config
from .experiments import (
    CONVERGENCE_COLUMNS,
    STABILITY_COLUMNS,
    VALIDATION_COLUMNS,
    build_instance,
    run_convergence,
    run_stability,
    run_validation,
    solver_options,
)
from .reports import Report

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="levybsde", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, default=None, help="INI experiment file (defaults built in)")
    p.add_argument("--seed", type=int, default=None, help="override [run] seed")
    p.add_argument("--out", type=Path, default=None, help="output directory (override [run] out)")
    p.add_argument("--format", choices=("csv", "json"), default=None, help="report format (override [run] format)")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("discretize", help="emit the increment law JSON for every N")
    s = sub.add_parser("solve", help="solve one instance and write its slice summary")
    s.add_argument("-N", type=int, default=None, help="number of steps (default: finest grid N)")
    sub.add_parser("converge", help="mesh-refinement study against the oracle")
    sub.add_parser("stability", help="stability ratios for randomized perturbation pairs")
    sub.add_parser("validate", help="construction, moment and martingale checks")
    return p


def _configure(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.out is not None:
        cfg.run.out = str(args.out)
    if args.format is not None:
        cfg.run.format = args.format
    return cfg


def _emit(report: Report, cfg: ExperimentConfig) -> int:
    path = report.write(cfg.run.out, cfg.run.format)
    for r in report.rows:
        print(" ".join(f"{k}={_short(r[k])}" for k in report.columns[:4]) + f"  {r.get('status', '')}")
    for k, v in report.verdicts.items():
        print(f"{k}: {v}")
    print(f"wrote {path}")
    return EXIT_OK if report.passed else EXIT_FAIL


def _short(v):
    return f"{v:.10g}" if isinstance(v, float) else v


def cmd_discretize(cfg: ExperimentConfig) -> int:
    model = cfg.build_model()
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    for N in sorted(cfg.grid.N):
        d = cfg.discretization
        layout, law = build_law(model, cfg.grid.T / N, bin_width=d.bin_width, R=d.R, kappa=d.kappa)
        path = out / f"law_N{N}.json"
        path.write_text(json.dumps(law.to_dict(layout), indent=2) + "\n")
        print(f"N={N} delta={law.delta:.6g} atoms={law.size} p0={law.p0:.6f} -> {path}")
    return EXIT_OK


def cmd_solve(cfg: ExperimentConfig, N: int | None) -> int:
    model = cfg.build_model()
    f, F = cfg.build_driver(model), cfg.build_terminal()
    N = max(cfg.grid.N) if N is None else N
    if f.lipschitz * cfg.grid.T / N >= 1.0:
        raise ContractionViolation(f"K·Δ >= 1 for N={N}")
    inst = build_instance(cfg, model, N)
    sol = backward_solve(inst.walk, lift_driver(f, inst.law, inst.layout), F, solver_options(cfg))
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.run.format == "json":
        path = out / f"solution_N{N}.json"
        path.write_text(sol.to_json() + "\n")
    else:
        path = out / f"solution_N{N}.csv"
        rows = sol.summary_rows()
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows({k: repr(v) if isinstance(v, float) else v for k, v in r.items()} for r in rows)
    print(f"N={N} y0={sol.y0!r} nodes={sol.lattice.n_nodes} max|dM|={sol.max_abs_dm():.3g} -> {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _configure(args)
        if cfg.run.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
    except (ConfigError, ContractionViolation) as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed, conf = cfg.run.seed, cfg.to_dict()
    # where a report is written is not part of what it reports
    del conf["run"]["out"]
    try:
        if args.command == "discretize":
            return cmd_discretize(cfg)
        if args.command == "solve":
            return cmd_solve(cfg, args.N)
        if args.command == "converge":
            rep = run_convergence(cfg)
            report = Report("convergence", seed, conf, rep.rows, rep.verdicts, list(CONVERGENCE_COLUMNS),
                            {"oracle": rep.oracle})
        elif args.command == "stability":
            rep = run_stability(cfg)
            report = Report("stability", seed, conf, rep.rows, rep.verdicts, list(STABILITY_COLUMNS))
        else:
            rep = run_validation(cfg)
            report = Report("validation", seed, conf, rep.rows, rep.verdicts, list(VALIDATION_COLUMNS))
    except (ConfigError, ContractionViolation) as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LevyBSDEError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return _emit(report, cfg)


if __name__ == "__main__":
    sys.exit(main())
