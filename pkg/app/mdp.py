"""
Finite-state controlled Markov chains.

A FiniteMdpSpec holds one row-stochastic kernel per binary action, an
outcome-mean table mu(s, w), a noise scale and an initial distribution.
Specs may carry a piecewise-constant schedule of regimes; times before the
first scheduled change (including all times <= 0) use the base regime.

Time convention: S_0 ~ initial_dist, S_1 ~ P_0^{W_0}(. | S_0) with W_0 = W_1,
S_{t+1} ~ P_t^{W_t}(. | S_t) and Y_t = mu_t(S_t, W_t) + sigma * eps_t.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.errors import InvalidInputError
from app.rng import make_generator

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-12
NOISE_LAWS = ("gaussian", "uniform")


def _readonly(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


def _check_stochastic_matrix(name: str, values, n: int) -> np.ndarray:
    matrix = np.array(values, dtype=float)
    if matrix.shape != (n, n):
        raise InvalidInputError(
            f"{name} must be {n}x{n}, got shape {matrix.shape}.", {"field": name}
        )
    if not np.all(np.isfinite(matrix)) or matrix.min() < 0.0 or matrix.max() > 1.0:
        raise InvalidInputError(f"{name} entries must lie in [0, 1].", {"field": name})
    row_error = np.abs(matrix.sum(axis=1) - 1.0)
    if row_error.max() > STOCHASTIC_TOL:
        bad = int(np.argmax(row_error))
        raise InvalidInputError(
            f"{name} row {bad} sums to {matrix[bad].sum()!r}, not 1.",
            {"field": name, "row": bad},
        )
    return _readonly(matrix)


def _check_outcome_table(name: str, values, n: int) -> np.ndarray:
    table = np.array(values, dtype=float)
    if table.shape != (n, 2):
        raise InvalidInputError(f"{name} must be {n}x2, got shape {table.shape}.", {"field": name})
    if not np.all(np.isfinite(table)):
        raise InvalidInputError(f"{name} entries must be finite.", {"field": name})
    return _readonly(table)


@dataclass(frozen=True, eq=False)
class Regime:
    """Kernels and outcome means in force over an interval of time."""

    kernel0: np.ndarray
    kernel1: np.ndarray
    outcome_mean: np.ndarray

    def kernel(self, w: int) -> np.ndarray:
        return self.kernel1 if w else self.kernel0


@dataclass(frozen=True, eq=False)
class FiniteMdpSpec:
    state_count: int
    kernel0: np.ndarray
    kernel1: np.ndarray
    outcome_mean: np.ndarray
    noise_sd: float
    initial_dist: np.ndarray
    noise_law: str = "gaussian"
    schedule: Tuple[Tuple[int, Regime], ...] = ()
    name: str = ""

    def __post_init__(self):
        n = int(self.state_count)
        if n < 1:
            raise InvalidInputError("state_count must be a positive integer.", {"field": "state_count"})
        object.__setattr__(self, "state_count", n)
        object.__setattr__(self, "kernel0", _check_stochastic_matrix("kernel0", self.kernel0, n))
        object.__setattr__(self, "kernel1", _check_stochastic_matrix("kernel1", self.kernel1, n))
        object.__setattr__(self, "outcome_mean", _check_outcome_table("outcome_mean", self.outcome_mean, n))

        sigma = float(self.noise_sd)
        if not np.isfinite(sigma) or sigma < 0:
            raise InvalidInputError("noise_sd must be a finite nonnegative number.", {"field": "noise_sd"})
        object.__setattr__(self, "noise_sd", sigma)
        if self.noise_law not in NOISE_LAWS:
            raise InvalidInputError(
                f"noise_law must be one of {NOISE_LAWS}, got {self.noise_law!r}.", {"field": "noise_law"}
            )

        dist = np.array(self.initial_dist, dtype=float)
        if dist.shape != (n,):
            raise InvalidInputError(f"initial_dist must have length {n}.", {"field": "initial_dist"})
        if not np.all(np.isfinite(dist)) or dist.min() < 0 or abs(dist.sum() - 1.0) > STOCHASTIC_TOL:
            raise InvalidInputError("initial_dist must be a probability vector.", {"field": "initial_dist"})
        object.__setattr__(self, "initial_dist", _readonly(dist))

        checked: List[Tuple[int, Regime]] = []
        previous = 1
        for start, regime in self.schedule:
            start = int(start)
            if start <= previous:
                raise InvalidInputError(
                    "schedule start times must be increasing and greater than 1.",
                    {"field": "schedule", "start": start},
                )
            previous = start
            checked.append((start, Regime(
                kernel0=_check_stochastic_matrix(f"schedule[{start}].kernel0", regime.kernel0, n),
                kernel1=_check_stochastic_matrix(f"schedule[{start}].kernel1", regime.kernel1, n),
                outcome_mean=_check_outcome_table(f"schedule[{start}].outcome_mean", regime.outcome_mean, n),
            )))
        object.__setattr__(self, "schedule", tuple(checked))

    @property
    def is_homogeneous(self) -> bool:
        return not self.schedule

    @property
    def base_regime(self) -> Regime:
        return Regime(self.kernel0, self.kernel1, self.outcome_mean)

    @property
    def regimes(self) -> List[Regime]:
        return [self.base_regime] + [regime for _, regime in self.schedule]

    @property
    def change_points(self) -> np.ndarray:
        return np.array([start for start, _ in self.schedule], dtype=np.int64)

    def regime_index(self, times) -> np.ndarray:
        """Index into `regimes` of the regime in force at each time."""
        return np.searchsorted(self.change_points, np.asarray(times, dtype=np.int64), side="right")

    def regime_at(self, t: int) -> Regime:
        return self.regimes[int(self.regime_index([t])[0])]

    def kernel(self, w: int, t: int = 1) -> np.ndarray:
        return self.regime_at(t).kernel(w)


def lambda_bound(spec: FiniteMdpSpec) -> float:
    """max |mu(s, w)| over every regime of the spec."""
    return float(max(np.abs(regime.outcome_mean).max() for regime in spec.regimes))


@dataclass(frozen=True, eq=False)
class Trajectory:
    horizon: int
    treatments: np.ndarray
    states: np.ndarray
    outcomes: np.ndarray
    seed: Optional[int] = None
    start_time: int = field(default=1)

    def __post_init__(self):
        for name in ("treatments", "states", "outcomes"):
            values = np.asarray(getattr(self, name))
            if values.shape != (self.horizon,):
                raise InvalidInputError(
                    f"Trajectory.{name} must have length {self.horizon}.", {"field": name}
                )
        if not np.isin(self.treatments, (0, 1)).all():
            raise InvalidInputError("Trajectory treatments must be binary.", {"field": "treatments"})

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": np.arange(self.start_time, self.start_time + self.horizon),
            "w": np.asarray(self.treatments, dtype=np.int64),
            "s": np.asarray(self.states, dtype=np.int64),
            "y": np.asarray(self.outcomes, dtype=float),
        })


def step_distribution(dist, kernel) -> np.ndarray:
    """Push a state distribution through one transition: dist . kernel."""
    dist = np.asarray(dist, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or dist.shape != (kernel.shape[0],):
        raise InvalidInputError(
            f"Dimension mismatch: distribution {dist.shape} vs kernel {kernel.shape}.",
            {"dist_shape": list(dist.shape), "kernel_shape": list(kernel.shape)},
        )
    return dist @ kernel


def _cumulative_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise CDFs with every entry at or after a row's last positive mass pinned to 1."""
    cum = np.minimum(np.cumsum(matrix, axis=-1), 1.0)
    n = matrix.shape[-1]
    last_positive = n - 1 - np.argmax(matrix[..., ::-1] > 0, axis=-1)
    cum[np.arange(n) >= last_positive[..., None]] = 1.0
    return cum


def _draw_noise(rng: np.random.Generator, law: str, size: int) -> np.ndarray:
    if law == "uniform":
        half_width = np.sqrt(3.0)
        return rng.uniform(-half_width, half_width, size)
    return rng.standard_normal(size)


def _as_treatment_matrix(treatments) -> np.ndarray:
    matrix = np.asarray(treatments)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    if matrix.ndim != 2 or matrix.shape[1] < 1:
        raise InvalidInputError("Treatment sequence must be non-empty.", {"field": "treatments"})
    if not np.isin(matrix, (0, 1)).all():
        raise InvalidInputError("Treatments must be 0/1.", {"field": "treatments"})
    return matrix.astype(np.int64)


def simulate_batch(
    spec: FiniteMdpSpec,
    treatments,
    seeds: Sequence[int],
    start_time: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Simulate one trajectory per row of `treatments`.

    Row r consumes only its own generator (seeded with seeds[r]): T+1
    uniforms for S_0..S_T followed by T noise draws, so a row is identical
    to a single-trajectory simulation with the same seed.

    Returns:
        (states, outcomes), both shaped like the treatment matrix.
    """
    W = _as_treatment_matrix(treatments)
    reps, horizon = W.shape
    if len(seeds) != reps:
        raise InvalidInputError(f"Expected {reps} seeds, got {len(seeds)}.", {"field": "seeds"})

    uniforms = np.empty((reps, horizon + 1))
    noise = np.empty((reps, horizon))
    for r, seed in enumerate(seeds):
        rng = make_generator(seed)
        uniforms[r] = rng.random(horizon + 1)
        noise[r] = _draw_noise(rng, spec.noise_law, horizon)

    regimes = spec.regimes
    cum = _cumulative_rows(np.stack([np.stack([g.kernel0, g.kernel1]) for g in regimes]))
    means = np.stack([g.outcome_mean for g in regimes])
    times = start_time + np.arange(horizon)
    step_regime = spec.regime_index(times)
    pre_regime = int(spec.regime_index([start_time - 1])[0])

    init_cum = _cumulative_rows(spec.initial_dist[None, :])[0]
    s = (init_cum[None, :] <= uniforms[:, 0, None]).sum(axis=1)
    s = (cum[pre_regime, W[:, 0], s] <= uniforms[:, 1, None]).sum(axis=1)

    states = np.empty((reps, horizon), dtype=np.int64)
    states[:, 0] = s
    for j in range(1, horizon):
        rows = cum[step_regime[j - 1], W[:, j - 1], s]
        s = (rows <= uniforms[:, j + 1, None]).sum(axis=1)
        states[:, j] = s

    outcomes = means[step_regime[None, :], states, W] + spec.noise_sd * noise
    return states, outcomes


def simulate_trajectory(spec: FiniteMdpSpec, treatments, seed: int, start_time: int = 1) -> Trajectory:
    """Simulate a single trajectory; fully determined by (spec, treatments, seed)."""
    treatments = np.asarray(treatments)
    if treatments.ndim != 1 or treatments.size == 0:
        raise InvalidInputError("Treatment sequence must be a non-empty 1-D sequence.", {"field": "treatments"})
    states, outcomes = simulate_batch(spec, treatments, [seed], start_time=start_time)
    return Trajectory(
        horizon=int(treatments.size),
        treatments=_readonly(treatments.astype(np.int64)),
        states=_readonly(states[0]),
        outcomes=_readonly(outcomes[0]),
        seed=int(seed),
        start_time=start_time,
    )
