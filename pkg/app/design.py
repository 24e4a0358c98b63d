"""
Switchback designs and treatment assignment.

The horizon is cut into k = T // l consecutive blocks of length l. Each block
gets an independent fair-coin treatment; every period in a block inherits
it. The first b periods of each block are burn-in and are dropped by the
estimator. Periods past k*l (lenient designs only) inherit the last block's
treatment and are never used for estimation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import pandas as pd

from app.errors import ConsistencyError, InvalidInputError, OutOfRangeError
from app.rng import make_generator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SwitchbackDesign:
    horizon: int
    block_length: int
    burn_in: int = 0
    strict: bool = True

    def __post_init__(self):
        T, l, b = self.horizon, self.block_length, self.burn_in
        for name, value in (("horizon", T), ("block_length", l), ("burn_in", b)):
            if isinstance(value, bool) or int(value) != value:
                raise InvalidInputError(f"{name} must be an integer.", {"field": name})
        if l <= 1:
            raise InvalidInputError("block_length must be greater than 1.", self.to_dict())
        if not 0 <= b < l:
            raise InvalidInputError("burn_in must satisfy 0 <= b < block_length.", self.to_dict())
        if T < l:
            raise InvalidInputError("horizon must hold at least one block.", self.to_dict())
        if T % l:
            if self.strict:
                raise InvalidInputError(
                    f"horizon {T} is not a multiple of block_length {l}.", self.to_dict()
                )
            logger.warning(
                "Design T=%d l=%d leaves %d trailing periods outside any block", T, l, T % l
            )

    @property
    def block_count(self) -> int:
        return self.horizon // self.block_length

    @property
    def used_horizon(self) -> int:
        return self.block_count * self.block_length

    @property
    def kept_per_block(self) -> int:
        return self.block_length - self.burn_in

    def to_dict(self) -> dict:
        return {"T": self.horizon, "l": self.block_length, "b": self.burn_in}


@dataclass(frozen=True, eq=False)
class AssignmentPlan:
    block_treatments: np.ndarray
    treatments: np.ndarray
    block_length: int
    seed: Optional[int] = None

    @property
    def block_count(self) -> int:
        return int(self.block_treatments.size)

    @property
    def k1(self) -> int:
        return int(self.block_treatments.sum())

    @property
    def k0(self) -> int:
        return self.block_count - self.k1

    def to_frame(self) -> pd.DataFrame:
        """One row per period: t, block, w."""
        T = self.treatments.size
        blocks = np.minimum(np.arange(T) // self.block_length, self.block_count - 1) + 1
        return pd.DataFrame({"t": np.arange(1, T + 1), "block": blocks, "w": self.treatments})


def expand_blocks(block_treatments, design: SwitchbackDesign) -> np.ndarray:
    """Period-level treatments from block-level ones (Z repeated l times, tail = Z_k)."""
    z = np.asarray(block_treatments, dtype=np.int64)
    if z.shape[-1] != design.block_count:
        raise InvalidInputError(
            f"Expected {design.block_count} block treatments, got {z.shape[-1]}.",
            design.to_dict(),
        )
    periods = np.repeat(z, design.block_length, axis=-1)
    tail = design.horizon - design.used_horizon
    if tail:
        periods = np.concatenate([periods, np.repeat(z[..., -1:], tail, axis=-1)], axis=-1)
    return periods


def _freeze(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


def assign(design: SwitchbackDesign, seed: int) -> AssignmentPlan:
    rng = make_generator(seed)
    z = (rng.random(design.block_count) < 0.5).astype(np.int64)
    return AssignmentPlan(
        block_treatments=_freeze(z),
        treatments=_freeze(expand_blocks(z, design)),
        block_length=design.block_length,
        seed=int(seed),
    )


def plan_from_treatments(treatments, design: SwitchbackDesign) -> AssignmentPlan:
    """
    Recover the block plan behind an observed treatment path.

    Only the k*l blocked periods must be constant within blocks. A lenient
    tail past k*l is kept as observed, whatever its treatments.
    """
    w = np.asarray(treatments, dtype=np.int64)
    if w.shape != (design.horizon,):
        raise ConsistencyError(
            f"Treatment path has length {w.size}, design horizon is {design.horizon}.",
            design.to_dict(),
        )
    blocks = w[: design.used_horizon].reshape(design.block_count, design.block_length)
    z = blocks[:, 0].copy()
    if not (blocks == z[:, None]).all():
        raise ConsistencyError(
            "Treatment path is not constant within blocks of the design.", design.to_dict()
        )
    return AssignmentPlan(
        block_treatments=_freeze(z), treatments=_freeze(w.copy()), block_length=design.block_length
    )


def filtered_index_set(design: SwitchbackDesign) -> np.ndarray:
    """
    1-based periods the estimator keeps: positions b+1..l of every block.

    Returns:
        Sorted array of length k * (l - b).
    """
    starts = np.arange(design.block_count, dtype=np.int64) * design.block_length
    positions = np.arange(design.burn_in + 1, design.block_length + 1, dtype=np.int64)
    return (starts[:, None] + positions[None, :]).ravel()


def block_of(
    t: int, block_length: Union[int, SwitchbackDesign], block_count: Optional[int] = None
) -> int:
    """
    1-based block holding 1-based period t.

    Passing a design instead of l bounds t by the design's own k*l.
    """
    if isinstance(block_length, SwitchbackDesign):
        if block_count is None:
            block_count = block_length.block_count
        block_length = block_length.block_length
    if block_length < 1:
        raise InvalidInputError("block_length must be positive.", {"l": block_length})
    if t < 1 or (block_count is not None and t > block_count * block_length):
        raise OutOfRangeError(f"Period {t} lies outside the blocked horizon.", {"t": t})
    return (t - 1) // block_length + 1
