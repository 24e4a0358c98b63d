import argparse
import time
from pathlib import Path

from app.harness import emit_plot_data, envelope, envelope_fits, load_experiment_config, run_grid
from app.settings import DATA_DIR, configure_logging, get_output_dir
from app.spec_io import write_frame

CONFIGS = {
    "GATE": DATA_DIR / "experiment_gate.json",
    "FATE": DATA_DIR / "experiment_fate.json",
    "FATE_GAP50": DATA_DIR / "experiment_fate_gap50.json",
}
REFERENCE_SLOPES = {"GATE": "-2/3", "FATE": "about -1 (ln T / T)"}


def run_study(reps=None, workers=None, master_seed=None, targets=("GATE", "FATE"), out_dir=None):
    out_dir = Path(out_dir) if out_dir else get_output_dir()
    summary = {}
    for target in targets:
        config = load_experiment_config(
            CONFIGS[target], reps=reps, workers=workers, master_seed=master_seed
        )
        print(f"\n{target}: {len(config.cells())} cells x {config.reps} reps")
        started = time.time()
        result = run_grid(config)
        elapsed = time.time() - started

        grid_path = write_frame(result.to_frame(), out_dir / f"{config.name}_grid.csv")
        plot_frame = emit_plot_data(result.cells, config.min_blocks or 1)
        plot_path = write_frame(plot_frame, out_dir / f"{config.name}_plot.csv")

        print(f"{'T':>7} {'l':>5} {'b':>4} {'MSE':>12} {'MC SE':>12} {'DEGEN':>6}")
        print("-" * 51)
        for cell in envelope(result.cells, config.min_blocks or 1):
            print(
                f"{cell.horizon:>7} {cell.block_length:>5} {cell.burn_in:>4} "
                f"{cell.mse:>12.5g} {cell.mc_se_of_mse:>12.3g} {cell.degenerate_count:>6}"
            )
        fit = envelope_fits(result.cells, config.min_blocks or 1).get(config.target)
        summary[target] = fit
        if fit:
            print(f"Envelope slope: {fit['slope']:.3f} (r^2 {fit['r_squared']:.3f}; reference {REFERENCE_SLOPES[config.target]})")
        print(f"Wrote {grid_path} and {plot_path} in {elapsed:.1f}s")

    print("\n" + "=" * 30)
    for target, fit in summary.items():
        slope = f"{fit['slope']:.3f}" if fit else "n/a"
        print(f"{target} SLOPE: {slope}")
    print("=" * 30)
    return summary


def parse_args():
    parser = argparse.ArgumentParser(description="Run the GATE and FATE rate grids on the benchmark chain")
    parser.add_argument("--reps", type=int, help="Override replicates per cell")
    parser.add_argument("--workers", type=int, help="Process pool width")
    parser.add_argument("--master-seed", type=int, help="Override the master seed")
    parser.add_argument("--target", type=str.upper, choices=sorted(CONFIGS), help="Run one grid only")
    parser.add_argument("--out-dir", type=str, help="Directory for grid and plot CSVs")
    return parser.parse_args()


if __name__ == "__main__":
    args = parse_args()
    configure_logging()
    run_study(
        reps=args.reps,
        workers=args.workers,
        master_seed=args.master_seed,
        targets=(args.target,) if args.target else ("GATE", "FATE"),
        out_dir=args.out_dir,
    )
