"""
Monte Carlo experiment harness.

An experiment is a grid of (T, l, b) cells. Each cell runs `reps`
independent assign -> simulate -> estimate pipelines and compares the
estimates to the oracle truth for its target (GATE over 1..k*l, or FATE over
the cell's own filtered periods).

Replicate r of a cell is seeded with derive_seed(master_seed, T, l, b,
target, r) and replicates are processed in fixed-size chunks, so results do
not depend on how many worker processes run the chunks.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.bounds import ModelBounds, burnin_bias_bound, fit_rate, mixing_bias_bound, variance_bound
from app.design import AssignmentPlan, SwitchbackDesign, assign, expand_blocks, filtered_index_set
from app.errors import InvalidInputError
from app.estimator import block_mean_matrix, dm_from_block_means
from app.mdp import FiniteMdpSpec, Trajectory, simulate_batch, simulate_trajectory
from app.oracle import fate, forced_block_means, gate
from app.rng import derive_seed, make_generator
from app.settings import get_workers
from app.spec_io import (
    BenchmarkSpecDocument,
    SpecDocument,
    build_spec,
    load_spec,
    read_json,
)

logger = logging.getLogger(__name__)

CHUNK_SIZE = 64
GRID_COLUMNS = [
    "target", "T", "l", "b", "k", "reps", "truth", "mean_estimate", "bias",
    "variance", "mse", "mc_se_of_mse", "degenerate_count",
]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    notes: str = ""
    spec: SpecDocument = Field(default_factory=BenchmarkSpecDocument)
    spec_path: Optional[str] = None
    target: Literal["GATE", "FATE"] = "GATE"
    horizons: List[int] = Field(min_length=1)
    block_lengths: List[int] = Field(default_factory=list)
    burn_ins: List[int] = Field(default_factory=lambda: [0])
    pairing: Literal["product", "gap"] = "product"
    gap: Optional[int] = None
    min_blocks: Optional[int] = Field(default=None, ge=1)
    reps: int = Field(ge=1)
    master_seed: int = 0
    strict: bool = True
    workers: Optional[int] = Field(default=None, ge=1)
    output: Optional[str] = None

    @model_validator(mode="after")
    def _check_pairing(self) -> "ExperimentConfig":
        if self.pairing == "gap" and (self.gap is None or self.gap < 1):
            raise ValueError("pairing 'gap' needs a positive `gap`")
        if self.pairing == "product" and not self.block_lengths:
            raise ValueError("pairing 'product' needs `block_lengths`")
        return self

    def cells(self) -> List["GridCell"]:
        """
        Cells in grid order: horizon-major, then block length, then burn-in.

        With `min_blocks` set, cells with fewer than that many blocks are left
        out, so the admissible block lengths grow with T.
        """
        cells = []
        for T in self.horizons:
            if self.pairing == "gap":
                pairs = [(b + self.gap, b) for b in self.burn_ins]
            else:
                pairs = [(l, b) for l in self.block_lengths for b in self.burn_ins]
            if self.min_blocks is not None:
                skipped = [(l, b) for l, b in pairs if T // l < self.min_blocks]
                if skipped:
                    logger.debug(
                        "T=%d: skipping %d cell(s) with fewer than %d blocks", T, len(skipped), self.min_blocks
                    )
                pairs = [(l, b) for l, b in pairs if T // l >= self.min_blocks]
            cells.extend(GridCell(T, l, b) for l, b in pairs)
        return cells

    def build_spec(self) -> FiniteMdpSpec:
        return load_spec(Path(self.spec_path)) if self.spec_path else build_spec(self.spec)

    def worker_count(self) -> int:
        return self.workers or get_workers()


def load_experiment_config(path: Path, **overrides) -> ExperimentConfig:
    """Read an experiment file; a relative spec_path resolves against the file's folder."""
    path = Path(path)
    data = read_json(path)
    if not isinstance(data, dict):
        raise InvalidInputError("Experiment file must hold a JSON object.", {"path": str(path)})
    data.update({k: v for k, v in overrides.items() if v is not None})
    if data.get("spec_path") and not Path(data["spec_path"]).is_absolute():
        data["spec_path"] = str(path.parent / data["spec_path"])
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        errors = [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise InvalidInputError("Experiment file failed validation.", {"errors": errors, "path": str(path)})


@dataclass(frozen=True)
class GridCell:
    horizon: int
    block_length: int
    burn_in: int

    def design(self, strict: bool = True) -> SwitchbackDesign:
        return SwitchbackDesign(self.horizon, self.block_length, self.burn_in, strict=strict)

    def to_dict(self) -> dict:
        return {"T": self.horizon, "l": self.block_length, "b": self.burn_in}


def replicate_seed(master_seed: int, cell: GridCell, target: str, rep: int) -> int:
    return derive_seed(master_seed, cell.horizon, cell.block_length, cell.burn_in, target, rep)


def run_replicate(spec: FiniteMdpSpec, design: SwitchbackDesign, seed: int) -> Tuple[AssignmentPlan, Trajectory]:
    """One assign -> simulate pipeline; the harness batches exactly this."""
    plan = assign(design, derive_seed(seed, "assign"))
    trajectory = simulate_trajectory(spec, plan.treatments, derive_seed(seed, "simulate"))
    return plan, trajectory


@dataclass(frozen=True)
class _ChunkTask:
    spec: FiniteMdpSpec
    design: SwitchbackDesign
    seeds: Tuple[int, ...]
    with_residuals: bool = False


@dataclass
class ReplicateSet:
    """Per-replicate outputs of one cell, in replicate order."""

    estimates: np.ndarray
    degenerate: np.ndarray
    residual_sums: Optional[np.ndarray] = None

    @property
    def reps(self) -> int:
        return int(self.estimates.size)


def _run_chunk(task: _ChunkTask) -> ReplicateSet:
    design = task.design
    z = np.empty((len(task.seeds), design.block_count), dtype=np.int64)
    sim_seeds = []
    for r, seed in enumerate(task.seeds):
        z[r] = assign(design, derive_seed(seed, "assign")).block_treatments
        sim_seeds.append(derive_seed(seed, "simulate"))
    treatments = expand_blocks(z, design)
    _, outcomes = simulate_batch(task.spec, treatments, sim_seeds)
    means = block_mean_matrix(outcomes, design.block_length, design.burn_in)
    tau, k1, k0 = dm_from_block_means(means, z)
    residual_sums = None
    if task.with_residuals:
        expected = forced_block_means(task.spec, design, treatments)
        signs = 2 * z - 1
        residual_sums = 2.0 / design.block_count * (signs * (means - expected)).sum(axis=1)
    return ReplicateSet(estimates=tau, degenerate=(k1 == 0) | (k0 == 0), residual_sums=residual_sums)


def _map_chunks(tasks: List[_ChunkTask], workers: int, executor: Optional[Executor]) -> List[ReplicateSet]:
    if executor is not None:
        return list(executor.map(_run_chunk, tasks))
    if workers <= 1 or len(tasks) == 1:
        return [_run_chunk(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_chunk, tasks))


def simulate_replicates(
    spec: FiniteMdpSpec,
    design: SwitchbackDesign,
    seeds: Sequence[int],
    workers: int = 1,
    executor: Optional[Executor] = None,
    with_residuals: bool = False,
) -> ReplicateSet:
    tasks = [
        _ChunkTask(spec, design, tuple(seeds[start:start + CHUNK_SIZE]), with_residuals)
        for start in range(0, len(seeds), CHUNK_SIZE)
    ]
    parts = _map_chunks(tasks, workers, executor)
    return ReplicateSet(
        estimates=np.concatenate([p.estimates for p in parts]),
        degenerate=np.concatenate([p.degenerate for p in parts]),
        residual_sums=np.concatenate([p.residual_sums for p in parts]) if with_residuals else None,
    )


@dataclass(frozen=True)
class CellResult:
    target: str
    horizon: int
    block_length: int
    burn_in: int
    block_count: int
    reps: int
    truth: float
    mean_estimate: float
    bias: float
    variance: float
    mse: float
    mc_se_of_mse: float
    degenerate_count: int
    bias_se: float
    estimates: np.ndarray = field(repr=False, compare=False)

    @property
    def cell(self) -> GridCell:
        return GridCell(self.horizon, self.block_length, self.burn_in)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "T": self.horizon,
            "l": self.block_length,
            "b": self.burn_in,
            "k": self.block_count,
            "reps": self.reps,
            "truth": self.truth,
            "mean_estimate": self.mean_estimate,
            "bias": self.bias,
            "variance": self.variance,
            "mse": self.mse,
            "mc_se_of_mse": self.mc_se_of_mse,
            "degenerate_count": self.degenerate_count,
        }


def summarize_cell(
    target: str, design: SwitchbackDesign, truth: float, replicates: ReplicateSet
) -> CellResult:
    estimates = replicates.estimates
    reps = estimates.size
    errors = estimates - truth
    squared = errors ** 2
    mean_estimate = float(estimates.mean())
    spread = reps > 1
    return CellResult(
        target=target,
        horizon=design.horizon,
        block_length=design.block_length,
        burn_in=design.burn_in,
        block_count=design.block_count,
        reps=int(reps),
        truth=float(truth),
        mean_estimate=mean_estimate,
        bias=mean_estimate - float(truth),
        variance=float(estimates.var(ddof=1)) if spread else 0.0,
        mse=float(squared.mean()),
        mc_se_of_mse=float(squared.std(ddof=1) / math.sqrt(reps)) if spread else math.nan,
        degenerate_count=int(replicates.degenerate.sum()),
        bias_se=float(estimates.std(ddof=1) / math.sqrt(reps)) if spread else math.nan,
        estimates=estimates,
    )


def cell_truth(spec: FiniteMdpSpec, design: SwitchbackDesign, target: str) -> float:
    if target == "GATE":
        return gate(spec, design.used_horizon)
    return fate(spec, filtered_index_set(design))


def run_cell(
    config: ExperimentConfig,
    cell: GridCell,
    truth: Optional[float] = None,
    spec: Optional[FiniteMdpSpec] = None,
    executor: Optional[Executor] = None,
) -> CellResult:
    spec = spec or config.build_spec()
    design = cell.design(config.strict)
    if truth is None:
        truth = cell_truth(spec, design, config.target)
    seeds = [replicate_seed(config.master_seed, cell, config.target, r) for r in range(config.reps)]
    started = time.perf_counter()
    replicates = simulate_replicates(spec, design, seeds, config.worker_count(), executor)
    result = summarize_cell(config.target, design, truth, replicates)
    logger.info(
        "Cell %s T=%d l=%d b=%d: mse=%.4g (%d reps, %.1fs)",
        config.target, cell.horizon, cell.block_length, cell.burn_in,
        result.mse, config.reps, time.perf_counter() - started,
    )
    if result.degenerate_count:
        logger.warning(
            "Cell T=%d l=%d b=%d had %d replicates with an empty arm",
            cell.horizon, cell.block_length, cell.burn_in, result.degenerate_count,
        )
    return result


def validate_cells(config: ExperimentConfig) -> List[GridCell]:
    """Check every cell before any simulation starts."""
    cells = config.cells()
    problems = []
    for cell in cells:
        try:
            cell.design(config.strict)
        except InvalidInputError as exc:
            problems.append({**cell.to_dict(), "reason": exc.message})
    if problems:
        raise InvalidInputError(f"{len(problems)} grid cell(s) are invalid.", {"cells": problems})
    return cells


@dataclass
class GridResult:
    config: ExperimentConfig
    cells: List[CellResult]

    @property
    def envelope(self) -> List[CellResult]:
        return envelope(self.cells, self.config.min_blocks or 1)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([c.to_dict() for c in self.cells], columns=GRID_COLUMNS)


def run_grid(config: ExperimentConfig, spec: Optional[FiniteMdpSpec] = None) -> GridResult:
    cells = validate_cells(config)
    spec = spec or config.build_spec()
    workers = config.worker_count()
    logger.info("Running %d cells x %d reps with %d worker(s)", len(cells), config.reps, workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [run_cell(config, cell, spec=spec, executor=pool) for cell in cells]
    else:
        results = [run_cell(config, cell, spec=spec) for cell in cells]
    return GridResult(config=config, cells=results)


def envelope(cells: Iterable[CellResult], min_blocks: int = 1) -> List[CellResult]:
    """Minimum-MSE cell per (target, T) among cells with k >= min_blocks; first in grid order wins ties."""
    best: Dict[Tuple[str, int], CellResult] = {}
    for cell in cells:
        if cell.block_count < min_blocks:
            continue
        key = (cell.target, cell.horizon)
        if key not in best or cell.mse < best[key].mse:
            best[key] = cell
    return sorted(best.values(), key=lambda c: (c.target, c.horizon))


REFERENCE_SHAPES: Dict[str, Callable[[float], float]] = {
    "ref_t_minus_2_3": lambda T: T ** (-2.0 / 3.0),
    "ref_log_t_over_t": lambda T: math.log(T) / T,
}
PLOT_COLUMNS = [
    "series", "target", "T", "l", "b", "mse", "mc_se",
    "fit_slope", "fit_intercept", "fit_r_squared",
]


def emit_plot_data(cells: Sequence[CellResult], min_blocks: int = 1) -> pd.DataFrame:
    """
    Plot-ready long table.

    Series: every cell, the per-T envelope (with its fitted log-log slope),
    and the two reference curves anchored at the first envelope point.
    """
    if not cells:
        raise InvalidInputError("No results to plot.")
    rows: List[dict] = []
    for cell in cells:
        rows.append({
            "series": "cell", "target": cell.target, "T": cell.horizon,
            "l": cell.block_length, "b": cell.burn_in, "mse": cell.mse, "mc_se": cell.mc_se_of_mse,
        })
    for target in sorted({c.target for c in cells}):
        points = [c for c in envelope(cells, min_blocks) if c.target == target]
        fit = None
        if len(points) >= 3 and all(c.mse > 0 for c in points):
            fit = fit_rate([(c.horizon, c.mse) for c in points])
        for cell in points:
            rows.append({
                "series": "envelope", "target": target, "T": cell.horizon,
                "l": cell.block_length, "b": cell.burn_in, "mse": cell.mse, "mc_se": cell.mc_se_of_mse,
                "fit_slope": fit.slope if fit else math.nan,
                "fit_intercept": fit.intercept if fit else math.nan,
                "fit_r_squared": fit.r_squared if fit else math.nan,
            })
        anchor = points[0]
        for series, shape in REFERENCE_SHAPES.items():
            scale = anchor.mse / shape(anchor.horizon)
            for cell in points:
                rows.append({
                    "series": series, "target": target, "T": cell.horizon,
                    "mse": scale * shape(cell.horizon),
                })
    return pd.DataFrame(rows, columns=PLOT_COLUMNS)


def envelope_fits(cells: Sequence[CellResult], min_blocks: int = 1) -> Dict[str, Optional[dict]]:
    """Log-log slope of the envelope per target (None with fewer than 3 points)."""
    fits: Dict[str, Optional[dict]] = {}
    kept = envelope(cells, min_blocks)
    for target in sorted({c.target for c in cells}):
        points = [(c.horizon, c.mse) for c in kept if c.target == target]
        fits[target] = fit_rate(points)._asdict() if len(points) >= 3 else None
    return fits


def bootstrap_variance_se(estimates, n_boot: int = 200, seed: int = 0) -> float:
    """Bootstrap standard error of the replicate sample variance."""
    values = np.asarray(estimates, dtype=float)
    if values.size < 2 or n_boot < 2:
        raise InvalidInputError("Bootstrap needs at least 2 estimates and 2 resamples.")
    rng = make_generator(derive_seed(seed, "bootstrap"))
    index = rng.integers(0, values.size, size=(n_boot, values.size))
    return float(values[index].var(axis=1, ddof=1).std(ddof=1))


@dataclass(frozen=True)
class DominanceCheck:
    bias_bound: float
    variance_bound: float
    bias_ok: bool
    variance_ok: bool
    bias_slack: float
    variance_slack: float

    def to_dict(self) -> dict:
        return {
            "bias_bound": self.bias_bound,
            "variance_bound": self.variance_bound,
            "bias_ok": self.bias_ok,
            "variance_ok": self.variance_ok,
            "bias_slack": self.bias_slack,
            "variance_slack": self.variance_slack,
        }


def bound_dominance(cell: CellResult, mb: ModelBounds, n_boot: int = 200, seed: int = 0) -> DominanceCheck:
    """Measured |bias| and variance against the closed-form bounds, with 3-SE slack."""
    l, b, k = cell.block_length, cell.burn_in, cell.block_count
    bias_bound = mixing_bias_bound(mb, l, b)
    if cell.target == "GATE":
        bias_bound += burnin_bias_bound(mb, l, b)
    var_bound = variance_bound(mb, k, l, b).total
    bias_slack = 3.0 * cell.bias_se
    var_slack = 3.0 * bootstrap_variance_se(cell.estimates, n_boot, seed)
    return DominanceCheck(
        bias_bound=bias_bound,
        variance_bound=var_bound,
        bias_ok=abs(cell.bias) <= bias_bound + bias_slack,
        variance_ok=cell.variance <= var_bound + var_slack,
        bias_slack=bias_slack,
        variance_slack=var_slack,
    )
