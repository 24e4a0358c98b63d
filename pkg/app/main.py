"""
Main entry point for the switchback toolkit.

This module provides the command-line interface: simulation, estimation,
oracle estimands, bounds and design rules, Monte Carlo experiments and
diagnostics. Results go to stdout as JSON (or to CSV files); failures print a
JSON error record on stderr and exit nonzero.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pandas as pd

from app.bounds import (
    ModelBounds,
    bound_curves,
    model_bounds_from_spec,
    mse_bound,
    recommend_design,
    search_design,
)
from app.clt import clt_check, corollary_cell
from app.database import save_run
from app.demo_data import default_spec_dir, generate_random_specs, remove_generated_specs
from app.design import SwitchbackDesign, plan_from_treatments
from app.errors import InvalidInputError, SwitchbackError
from app.estimator import dm_estimate
from app.harness import (
    emit_plot_data,
    envelope_fits,
    load_experiment_config,
    run_grid,
    run_replicate,
)
from app.mixing import estimate_mixing_time, mixing_report
from app.oracle import estimand_report
from app.settings import configure_logging, get_db_path, get_output_dir
from app.spec_io import load_spec, read_trajectory_csv, write_frame, write_plan_csv, write_trajectory_csv

logger = logging.getLogger("app.main")


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def emit(record) -> None:
    print(json.dumps(record, indent=2, default=_json_default))


def _output_path(value: Optional[str], default_name: str) -> Path:
    return Path(value) if value else get_output_dir() / default_name


def _design(args, horizon: int) -> SwitchbackDesign:
    return SwitchbackDesign(horizon, args.block_length, args.burn_in, strict=not args.lenient)


def _model_bounds(args, horizon: int) -> ModelBounds:
    """Constants from --spec, or from explicit --lam/--psi/... flags."""
    if args.lam is None:
        return model_bounds_from_spec(load_spec(args.spec), horizon, c_star=args.c_star)
    return ModelBounds(
        lam=args.lam,
        psi=args.psi,
        sigma_sq=args.sigma_sq,
        t_mix=args.t_mix,
        c_star=args.c_star,
    )


def cmd_simulate(args) -> int:
    spec = load_spec(args.spec)
    design = _design(args, args.horizon)
    plan, trajectory = run_replicate(spec, design, args.seed)
    trajectory_path = write_trajectory_csv(trajectory, _output_path(args.out, "trajectory.csv"))
    record = {
        "trajectory": trajectory_path,
        "design": design.to_dict(),
        "k1": plan.k1,
        "k0": plan.k0,
        "seed": args.seed,
    }
    if args.plan_out:
        record["plan"] = write_plan_csv(plan, Path(args.plan_out))
    emit(record)
    return 0


def cmd_estimate(args) -> int:
    trajectory = read_trajectory_csv(Path(args.trajectory))
    design = _design(args, trajectory.horizon)
    plan = plan_from_treatments(trajectory.treatments, design)
    report = dm_estimate(trajectory, plan, design)
    if args.csv:
        frame = pd.DataFrame([report.csv_row()])
        print(frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"), end="")
    else:
        emit(report.to_dict())
    return 0


def cmd_oracle(args) -> int:
    spec = load_spec(args.spec)
    design = _design(args, args.horizon)
    report = estimand_report(spec, design, pre_period=args.pre_period)
    record = {"design": design.to_dict(), **report.to_dict()}
    if args.trace_out:
        frame = pd.DataFrame({
            "t": np.arange(1, report.tau_trace.size + 1),
            "tau_t": report.tau_trace,
        })
        record["trace"] = write_frame(frame, Path(args.trace_out))
    emit(record)
    return 0


def cmd_bounds(args) -> int:
    mb = _model_bounds(args, args.horizon)
    if args.curve:
        horizons = [int(v) for v in args.curve.split(",") if v.strip()]
        path = write_frame(bound_curves(mb, horizons, args.target), _output_path(args.out, "bound_curves.csv"))
        emit({"model": mb.to_dict(), "curves": path})
        return 0
    design = _design(args, args.horizon)
    emit({"model": mb.to_dict(), **mse_bound(mb, design, args.target).to_dict()})
    return 0


def cmd_design(args) -> int:
    mb = _model_bounds(args, args.horizon)
    record = {"model": mb.to_dict(), **recommend_design(args.horizon, mb, args.target).to_dict()}
    if args.search:
        record["search"] = search_design(mb, args.horizon, args.target).to_dict()
    emit(record)
    return 0


def cmd_experiment(args) -> int:
    config = load_experiment_config(
        Path(args.config), reps=args.reps, master_seed=args.master_seed, workers=args.workers
    )
    result = run_grid(config)
    grid_path = write_frame(result.to_frame(), _output_path(args.out or config.output, f"{config.name}_grid.csv"))
    plot_path = write_frame(
        emit_plot_data(result.cells, config.min_blocks or 1), _output_path(args.plot_out, f"{config.name}_plot.csv")
    )
    record = {
        "name": config.name,
        "cells": len(result.cells),
        "grid": grid_path,
        "plot": plot_path,
        "envelope": [
            {"T": c.horizon, "l": c.block_length, "b": c.burn_in, "mse": c.mse}
            for c in result.envelope
        ],
        "fits": envelope_fits(result.cells, config.min_blocks or 1),
    }
    if args.db is not None:
        db_path = Path(args.db) if args.db else get_db_path()
        record["run_id"] = save_run(
            config.model_dump(mode="json"), [c.to_dict() for c in result.cells], db_path
        )
        record["db"] = db_path
    emit(record)
    return 0


def cmd_clt_check(args) -> int:
    config = load_experiment_config(
        Path(args.config), reps=args.reps, master_seed=args.master_seed, workers=args.workers
    )
    spec = config.build_spec()
    t_mix = estimate_mixing_time(spec)
    if args.auto:
        cell = corollary_cell(t_mix, gap=args.gap, min_blocks=args.min_blocks)
    else:
        cells = config.cells()
        if len(cells) != 1:
            raise InvalidInputError(
                f"clt-check runs a single cell; the config defines {len(cells)}.",
                {"cells": [c.to_dict() for c in cells]},
            )
        cell = cells[0]
    diagnostics = clt_check(config, cell, spec=spec, t_mix=t_mix)
    emit({"cell": cell.to_dict(), "t_mix": t_mix, **diagnostics.to_dict()})
    return 0


def cmd_mixing(args) -> int:
    emit(mixing_report(load_spec(args.spec), args.max_lag))
    return 0


def cmd_random_spec(args) -> int:
    out_dir = Path(args.out_dir) if args.out_dir else default_spec_dir()
    if args.clear:
        emit({"removed": remove_generated_specs(out_dir), "dir": out_dir})
        return 0
    written = generate_random_specs(
        out_dir, count=args.count, n_states=args.states, seed=args.seed, noise_sd=args.noise_sd
    )
    emit({"written": written})
    return 0


def _add_spec(parser) -> None:
    parser.add_argument("--spec", type=str, help="Spec JSON file (default: bundled benchmark)")


def _add_design(parser, with_horizon: bool = True) -> None:
    if with_horizon:
        parser.add_argument("--horizon", "-T", type=int, required=True, help="Horizon T")
    parser.add_argument("--block-length", "-l", type=int, required=True, help="Block length l")
    parser.add_argument("--burn-in", "-b", type=int, default=0, help="Burn-in periods per block")
    parser.add_argument(
        "--lenient",
        action="store_true",
        help="Allow T not divisible by l (trailing periods are unused)",
    )


def _add_model(parser) -> None:
    _add_spec(parser)
    parser.add_argument("--lam", type=float, help="Lambda; when set, constants come from flags instead of --spec")
    parser.add_argument("--psi", type=float, default=0.0, help="Psi (stable-effect spread)")
    parser.add_argument("--sigma-sq", type=float, default=0.0, help="Noise variance")
    parser.add_argument("--t-mix", type=float, default=0.0, help="Mixing time")
    parser.add_argument("--c-star", type=float, default=0.0, help="Additive constant in the FATE burn-in rule")
    parser.add_argument("--target", type=str.upper, choices=["GATE", "FATE"], default="GATE")


def _add_run_overrides(parser) -> None:
    parser.add_argument("--config", type=str, required=True, help="Experiment JSON file")
    parser.add_argument("--reps", type=int, help="Override replicates per cell")
    parser.add_argument("--master-seed", type=int, help="Override the master seed")
    parser.add_argument("--workers", type=int, help="Process pool width")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Switchback experiment toolkit CLI")
    parser.add_argument("--log-level", type=str, help="Logging level (default from SWITCHBACK_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Assign a plan and simulate one trajectory to CSV")
    _add_spec(p)
    _add_design(p)
    p.add_argument("--seed", type=int, default=0, help="Trajectory seed")
    p.add_argument("--out", type=str, help="Trajectory CSV path")
    p.add_argument("--plan-out", type=str, help="Also write the assignment plan CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="Burn-in difference-in-means from a trajectory CSV")
    p.add_argument("--trajectory", type=str, required=True, help="CSV with columns t,w,s,y")
    _add_design(p, with_horizon=False)
    p.add_argument("--csv", action="store_true", help="Print a CSV row instead of JSON")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("oracle", help="Exact GATE / FATE for a spec and design")
    _add_spec(p)
    _add_design(p)
    p.add_argument("--pre-period", type=int, help="Finite pre-period instead of the stationary start")
    p.add_argument("--trace-out", type=str, help="Write the tau_t trace CSV")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bounds", help="Bias / variance / MSE bounds for a design")
    _add_model(p)
    _add_design(p)
    p.add_argument("--curve", type=str, help="Comma-separated horizons: write bound curves at recommended designs")
    p.add_argument("--out", type=str, help="Bound curve CSV path")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("design", help="Recommended (l, b) for a horizon")
    _add_model(p)
    p.add_argument("--horizon", "-T", type=int, required=True, help="Horizon T")
    p.add_argument("--search", action="store_true", help="Also brute-force the bound over (l, b)")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("experiment", help="Run a Monte Carlo grid")
    _add_run_overrides(p)
    p.add_argument("--out", type=str, help="Grid CSV path")
    p.add_argument("--plot-out", type=str, help="Plot-data CSV path")
    p.add_argument("--db", nargs="?", const="", default=None, help="Record the run in SQLite (optional path)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("clt-check", help="Normal-approximation diagnostics for one FATE cell")
    _add_run_overrides(p)
    p.add_argument("--auto", action="store_true", help="Pick the cell from the fitted mixing time")
    p.add_argument("--gap", type=int, default=24, help="Kept periods per block with --auto")
    p.add_argument("--min-blocks", type=int, default=200, help="Block count with --auto")
    p.set_defaults(func=cmd_clt_check)

    p = sub.add_parser("mixing", help="Contraction profiles and mixing time of a spec")
    _add_spec(p)
    p.add_argument("--max-lag", type=int, help="Largest power inspected (default SWITCHBACK_MAX_LAG)")
    p.set_defaults(func=cmd_mixing)

    p = sub.add_parser("random-spec", help="Write random n-state spec files")
    p.add_argument("--states", type=int, default=5)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--out-dir", type=str, help=f"Default: {get_output_dir() / 'specs'}")
    p.add_argument("--clear", action="store_true", help="Remove generated spec files instead")
    p.set_defaults(func=cmd_random_spec)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except SwitchbackError as exc:
        print(json.dumps(exc.to_dict(), default=_json_default), file=sys.stderr)
        return 2
    except Exception as exc:
        logger.exception("Unexpected failure")
        print(json.dumps({"error": "unexpected", "message": str(exc), "details": {}}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
