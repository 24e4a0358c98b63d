"""
Burn-in difference-in-means estimator.

Each block contributes the average of its last l - b outcomes; tau_hat is the
mean of treated block averages minus the mean of control block averages. An
arm with no blocks contributes 0 to the difference (0/0 := 0) and the report
is flagged degenerate.

Sums run block-major in ascending period order so batched and single
trajectory evaluations agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.design import AssignmentPlan, SwitchbackDesign
from app.errors import ConsistencyError, InvalidInputError
from app.mdp import Trajectory


@dataclass(frozen=True)
class BlockMean:
    block: int
    treatment: int
    mean: float


@dataclass(frozen=True)
class EstimateReport:
    tau_hat: float
    k1: int
    k0: int
    block_means: Tuple[BlockMean, ...]
    degenerate: bool
    block_length: int
    burn_in: int

    def to_dict(self) -> dict:
        return {
            "tau_hat": self.tau_hat,
            "k1": self.k1,
            "k0": self.k0,
            "degenerate": self.degenerate,
            "l": self.block_length,
            "b": self.burn_in,
            "block_means": [
                {"block": m.block, "w": m.treatment, "mean": m.mean} for m in self.block_means
            ],
        }

    def csv_row(self) -> dict:
        return {"tau_hat": self.tau_hat, "k1": self.k1, "k0": self.k0, "degenerate": self.degenerate}


def block_mean_matrix(outcomes, block_length: int, burn_in: int) -> np.ndarray:
    """
    Post-burn-in block averages.

    Args:
        outcomes: (R, T) or (T,) outcome array.

    Returns:
        (R, k) array of block averages (or (k,) for 1-D input).
    """
    y = np.asarray(outcomes, dtype=float)
    single = y.ndim == 1
    if single:
        y = y[None, :]
    horizon = y.shape[1]
    if horizon < block_length:
        raise InvalidInputError(
            f"Trajectory of length {horizon} is shorter than one block ({block_length}).",
            {"T": horizon, "l": block_length},
        )
    if not 0 <= burn_in < block_length:
        raise InvalidInputError("burn_in must satisfy 0 <= b < l.", {"l": block_length, "b": burn_in})
    k = horizon // block_length
    blocks = y[:, : k * block_length].reshape(y.shape[0], k, block_length)
    total = blocks[:, :, burn_in].copy()
    for position in range(burn_in + 1, block_length):
        total += blocks[:, :, position]
    means = total / (block_length - burn_in)
    return means[0] if single else means


def block_means(trajectory: Trajectory, design: SwitchbackDesign) -> np.ndarray:
    """Block averages of one trajectory under `design`; periods past k*l are ignored."""
    return block_mean_matrix(trajectory.outcomes, design.block_length, design.burn_in)


def dm_from_block_means(block_averages, block_treatments) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Treated-minus-control average of block means, row by row.

    Returns:
        (tau_hat, k1, k0) arrays of length R.
    """
    means = np.atleast_2d(np.asarray(block_averages, dtype=float))
    z = np.atleast_2d(np.asarray(block_treatments)).astype(bool)
    if means.shape != z.shape:
        raise ConsistencyError(
            f"Block means {means.shape} and block treatments {z.shape} disagree.",
            {"means_shape": list(means.shape), "treatments_shape": list(z.shape)},
        )
    reps, k = means.shape
    treated = np.zeros(reps)
    control = np.zeros(reps)
    for i in range(k):
        treated += np.where(z[:, i], means[:, i], 0.0)
        control += np.where(z[:, i], 0.0, means[:, i])
    k1 = z.sum(axis=1)
    k0 = k - k1
    treated_avg = np.divide(treated, k1, out=np.zeros(reps), where=k1 > 0)
    control_avg = np.divide(control, k0, out=np.zeros(reps), where=k0 > 0)
    return treated_avg - control_avg, k1, k0


def dm_estimate(
    trajectory: Trajectory, plan: AssignmentPlan, design: SwitchbackDesign
) -> EstimateReport:
    if plan.block_length != design.block_length or plan.block_count != design.block_count:
        raise ConsistencyError("Assignment plan was not drawn from this design.", design.to_dict())
    if trajectory.horizon != design.horizon:
        raise ConsistencyError(
            f"Trajectory horizon {trajectory.horizon} differs from design horizon {design.horizon}.",
            design.to_dict(),
        )
    if not np.array_equal(np.asarray(trajectory.treatments), plan.treatments):
        raise ConsistencyError(
            "Trajectory treatments do not follow the assignment plan.", design.to_dict()
        )

    means = block_means(trajectory, design)
    tau, k1, k0 = dm_from_block_means(means, plan.block_treatments)
    per_block: List[BlockMean] = [
        BlockMean(block=i + 1, treatment=int(z), mean=float(m))
        for i, (z, m) in enumerate(zip(plan.block_treatments, means))
    ]
    return EstimateReport(
        tau_hat=float(tau[0]),
        k1=int(k1[0]),
        k0=int(k0[0]),
        block_means=tuple(per_block),
        degenerate=bool(k1[0] == 0 or k0[0] == 0),
        block_length=design.block_length,
        burn_in=design.burn_in,
    )
