"""
Normal-approximation diagnostics for the burn-in estimator.

Replicate errors are standardized by the replicate standard deviation and
compared with N(0, 1): interval coverage, skewness, excess kurtosis and the
Kolmogorov-Smirnov distance. clt_check also reports sample analogs of the
limiting variance components computed from exact block means.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from app.bounds import round_half_down
from app.design import SwitchbackDesign, filtered_index_set
from app.errors import InsufficientReplicatesError, InvalidInputError
from app.harness import ExperimentConfig, GridCell, replicate_seed, simulate_replicates
from app.mdp import FiniteMdpSpec
from app.oracle import block_pure_means, fate

logger = logging.getLogger(__name__)

MIN_REPS = 100
NOMINAL_LEVELS = (0.90, 0.95)


@dataclass(frozen=True)
class VarianceAnalogs:
    v0: float
    v1: float
    v01: float
    sigma: Optional[float] = None

    @property
    def total(self) -> Optional[float]:
        if self.sigma is None:
            return None
        return self.v0 + self.v1 + 2.0 * self.v01 + self.sigma

    def to_dict(self) -> dict:
        return {"V0": self.v0, "V1": self.v1, "V01": self.v01, "Sigma": self.sigma, "V": self.total}


@dataclass(frozen=True)
class CltDiagnostics:
    reps: int
    block_count: int
    truth: float
    mean_estimate: float
    sd: float
    coverage_90: float
    coverage_95: float
    skewness: float
    skewness_se: float
    excess_kurtosis: float
    ks_distance: float
    ks_pvalue: float
    scaled_variance: float
    variance_analogs: Optional[VarianceAnalogs] = None
    standardized: np.ndarray = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        record = {
            "reps": self.reps,
            "k": self.block_count,
            "truth": self.truth,
            "mean_estimate": self.mean_estimate,
            "sd": self.sd,
            "coverage_90": self.coverage_90,
            "coverage_95": self.coverage_95,
            "skewness": self.skewness,
            "skewness_se": self.skewness_se,
            "excess_kurtosis": self.excess_kurtosis,
            "ks_distance": self.ks_distance,
            "ks_pvalue": self.ks_pvalue,
            "k_times_variance": self.scaled_variance,
        }
        if self.variance_analogs is not None:
            record["variance_analogs"] = self.variance_analogs.to_dict()
        return record


def clt_diagnostics(
    estimates,
    truth: float,
    block_count: int,
    min_reps: int = MIN_REPS,
    variance_analogs: Optional[VarianceAnalogs] = None,
) -> CltDiagnostics:
    """Diagnostics for an arbitrary replicate set (simulated or injected)."""
    values = np.asarray(estimates, dtype=float)
    if values.size < min_reps:
        raise InsufficientReplicatesError(
            f"CLT diagnostics need at least {min_reps} replicates, got {values.size}.",
            {"reps": int(values.size), "min_reps": min_reps},
        )
    if block_count < 1:
        raise InvalidInputError("block_count must be positive.", {"k": block_count})
    sd = float(values.std(ddof=1))
    if sd == 0.0:
        raise InvalidInputError("Replicate estimates have zero spread; nothing to standardize.")
    z = (values - truth) / sd
    coverage = {
        level: float(np.mean(np.abs(z) <= stats.norm.ppf(0.5 + level / 2.0)))
        for level in NOMINAL_LEVELS
    }
    ks = stats.kstest(z, "norm")
    n = values.size
    return CltDiagnostics(
        reps=int(n),
        block_count=block_count,
        truth=float(truth),
        mean_estimate=float(values.mean()),
        sd=sd,
        coverage_90=coverage[0.90],
        coverage_95=coverage[0.95],
        skewness=float(stats.skew(z)),
        skewness_se=math.sqrt(6.0 * (n - 2) / ((n + 1) * (n + 3))),
        excess_kurtosis=float(stats.kurtosis(z)),
        ks_distance=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        scaled_variance=float(block_count * values.var(ddof=1)),
        variance_analogs=variance_analogs,
        standardized=z,
    )


def block_variance_analogs(
    spec: FiniteMdpSpec, design: SwitchbackDesign, residual_sums=None
) -> VarianceAnalogs:
    """
    V0, V1 and V01 from exact per-block pure means; Sigma from replicate
    residual sums (2/k) sum_i (2 Z_i - 1)(Ybar_i - M_i) when supplied.
    """
    means = block_pure_means(spec, design)
    centered = means - means.mean(axis=0)
    v0 = float(np.mean(centered[:, 0] ** 2))
    v1 = float(np.mean(centered[:, 1] ** 2))
    v01 = float(np.mean(centered[:, 0] * centered[:, 1]))
    sigma = None
    if residual_sums is not None:
        sigma = float(design.block_count * np.mean(np.asarray(residual_sums) ** 2))
    return VarianceAnalogs(v0=v0, v1=v1, v01=v01, sigma=sigma)


def corollary_cell(t_mix: float, gap: int = 24, min_blocks: int = 200, max_rounds: int = 20) -> GridCell:
    """
    Cell with burn-in b = (t_mix/2) ln T (half-down), l = b + gap and
    T = min_blocks * l, iterated until b is consistent with its own T.
    """
    if gap < 1 or min_blocks < 1:
        raise InvalidInputError("gap and min_blocks must be positive.", {"gap": gap, "min_blocks": min_blocks})
    b = 0
    for _ in range(max_rounds):
        horizon = min_blocks * (b + gap)
        next_b = max(0, round_half_down(t_mix / 2.0 * math.log(horizon)))
        if next_b == b:
            break
        b = next_b
    return GridCell(min_blocks * (b + gap), b + gap, b)


def clt_check(
    config: ExperimentConfig,
    cell: GridCell,
    spec: Optional[FiniteMdpSpec] = None,
    t_mix: Optional[float] = None,
) -> CltDiagnostics:
    """Simulate one FATE cell and report normal-approximation diagnostics."""
    if config.reps < MIN_REPS:
        raise InsufficientReplicatesError(
            f"clt-check needs at least {MIN_REPS} replicates, got {config.reps}.",
            {"reps": config.reps, "min_reps": MIN_REPS},
        )
    spec = spec or config.build_spec()
    design = cell.design(config.strict)
    if t_mix is not None and design.burn_in < t_mix / 2.0 * math.log(design.block_count):
        logger.warning(
            "Burn-in %d is short of (t_mix/2) ln k = %.1f; normal approximation may be off",
            design.burn_in, t_mix / 2.0 * math.log(design.block_count),
        )
    seeds = [replicate_seed(config.master_seed, cell, "FATE", r) for r in range(config.reps)]
    replicates = simulate_replicates(
        spec, design, seeds, config.worker_count(), with_residuals=True
    )
    truth = fate(spec, filtered_index_set(design))
    analogs = block_variance_analogs(spec, design, replicates.residual_sums)
    return clt_diagnostics(replicates.estimates, truth, design.block_count, variance_analogs=analogs)
