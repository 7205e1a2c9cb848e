"""Command-line front end.

Exit codes: 0 success, 1 validation error (including failed acceptance
checks), 2 Newton non-convergence, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import acceptance
from . import scenario as sc
from .config import ConfigError, dump_config, load_config
from .estimator import NewtonConvergenceError
from .measurement import DegenerateGeometryError, NoiseSpec
from .report import ReportIOError, emit_plots, run_summary, write_run_csv

OUT_ENV = "VARPOSE_OUT"
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "varpose_out")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which is reserved for Newton failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="varpose", description="Variational SE(3) pose/velocity estimator simulator")
    sub = p.add_subparsers(dest="command", required=True)

    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML scenario file (defaults to the published setup)")
    common.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV} or ./varpose_out)")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--mode", choices=("lgvi", "rk4", "both"), default="lgvi")
    common.add_argument("--steps", type=_positive_int, help="number of steps (overrides duration)")
    common.add_argument("--dt", type=_positive_float, help="step size in seconds")
    common.add_argument("--no-plots", action="store_true", help="skip SVG output")

    sub.add_parser("run", parents=[common], help="simulate one scenario and write CSV + SVG")
    sub.add_parser("paper-scenario", parents=[common], help="the published two-UAV run")
    sw = sub.add_parser("sweep", parents=[common], help="repeat a scenario over seeds and noise widths")
    sw.add_argument("--runs", type=_positive_int, default=5, help="seeds per noise width")
    sw.add_argument("--noise-widths", type=lambda s: [float(x) for x in s.split(",")],
                    help="comma-separated position noise widths in m (velocity widths scale with them)")
    sw.add_argument("--workers", type=_positive_int, default=1)
    ck = sub.add_parser("check", parents=[common], help="run the acceptance suite")
    ck.add_argument("--criteria", type=lambda s: [int(x) for x in s.split(",")], help="e.g. 1,2,6")
    ck.add_argument("--workers", type=_positive_int, default=1)
    return p


def _scenario(args) -> sc.ScenarioConfig:
    cfg = sc.paper_config() if args.config is None or args.command == "paper-scenario" else load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed", "must be non-negative")
        cfg = replace(cfg, seed=args.seed, noise=replace(cfg.noise, seed=args.seed))
    if args.dt is not None:
        steps = cfg.steps
        cfg = replace(cfg, dt=args.dt, duration=steps * args.dt if args.steps is None else args.steps * args.dt)
    if args.steps is not None:
        cfg = replace(cfg, duration=args.steps * cfg.dt)
    return cfg


def _modes(args):
    return ("lgvi", "rk4") if args.mode == "both" else (args.mode,)


def _outdir(args) -> Path:
    out = args.out if args.out is not None else Path(_default_out())
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run(rec: sc.RunRecord, out: Path, stem: str, plots: bool) -> dict:
    csv_path = write_run_csv(rec, out / f"{stem}.csv")
    summary = run_summary(rec) | {"csv": str(csv_path)}
    if plots:
        summary["plots"] = [str(p) for p in emit_plots(rec, out, prefix=f"{stem}_")]
    return summary


def cmd_run(args) -> int:
    cfg = _scenario(args)
    out = _outdir(args)
    dump_config(cfg, out / "config_used.yaml")
    report = {}
    for mode in _modes(args):
        rec = sc.run_scenario(cfg, mode)
        report[mode] = _write_run(rec, out, f"run_{mode}", not args.no_plots)
        s = report[mode]
        print(f"{mode}: {s['steps']} steps, attitude error {s['initial_attitude_error_rad']:.4g} -> "
              f"{s['final_attitude_error_rad']:.4g} rad, position error {s['initial_position_error_m']:.4g} -> "
              f"{s['final_position_error_m']:.4g} m, Newton max {s['newton_max_iterations']} iterations")
    (out / "summary.json").write_text(json.dumps(report, indent=2))
    print(f"wrote {out}")
    return EXIT_OK


def _sweep_job(job):
    run_id, cfg, mode, out, plots = job
    rec = sc.run_scenario(cfg, mode)
    return run_id, cfg.noise.support_width, cfg.seed, _write_run(rec, Path(out), run_id, plots)


def cmd_sweep(args) -> int:
    base = _scenario(args)
    out = _outdir(args)
    widths = args.noise_widths if args.noise_widths is not None else [base.noise.support_width]
    if any(w < 0 for w in widths):
        raise ConfigError("noise-widths", "must be non-negative")
    scale = base.noise.velocity_support_width / base.noise.support_width if base.noise.support_width else 1.0
    jobs = []
    for w in widths:
        for k in range(args.runs):
            seed = base.seed + k
            cfg = replace(base, seed=seed, noise=NoiseSpec(w, w * scale, seed))
            for mode in _modes(args):
                jobs.append((f"w{w:g}_s{seed}_{mode}", cfg, mode, str(out), not args.no_plots))
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    lines = ["run_id,noise_width_m,seed,mode,final_attitude_error_rad,final_position_error_m,newton_max_iterations"]
    for run_id, w, seed, s in results:
        lines.append(f"{run_id},{w:.17g},{seed},{s['mode']},{s['final_attitude_error_rad']:.17g},"
                     f"{s['final_position_error_m']:.17g},{s['newton_max_iterations']}")
    (out / "sweep_summary.csv").write_text("\n".join(lines) + "\n")
    print(f"{len(results)} runs written to {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    base = _scenario(args)
    results = acceptance.run_all(args.criteria, base, args.workers,
                                 on_result=lambda r: print(r.line(), flush=True))
    ok = all(r.passed for r in results)
    if args.out is not None or OUT_ENV in os.environ:
        out = _outdir(args)
        (out / "check_report.json").write_text(json.dumps(
            {"passed": ok, "criteria": [r.as_dict() for r in results]}, indent=2, default=str))
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return EXIT_OK if ok else EXIT_INVALID


COMMANDS = {"run": cmd_run, "paper-scenario": cmd_run, "sweep": cmd_sweep, "check": cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DegenerateGeometryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NewtonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ReportIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
