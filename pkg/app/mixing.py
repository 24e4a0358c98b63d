"""
Contraction coefficients and mixing-time estimates.

delta(P) = max over row pairs of the total-variation distance between rows.
For each action kernel (and each regime of a piecewise spec) the mixing time
is min over lags j with delta(P^j) < 1 of -j / ln delta(P^j); the value for
a whole FiniteMdpSpec is the worst case over kernels.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from scipy import stats

from app.errors import InvalidInputError, NonMixingError
from app.mdp import FiniteMdpSpec
from app.settings import get_max_lag

logger = logging.getLogger(__name__)

DECAY_FLOOR = 1e-12


def dobrushin_coefficient(kernel) -> float:
    """Maximum total-variation distance between two rows of `kernel`."""
    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise InvalidInputError(f"Kernel must be square, got shape {kernel.shape}.")
    gaps = 0.5 * np.abs(kernel[:, None, :] - kernel[None, :, :]).sum(axis=-1)
    return float(min(max(gaps.max(), 0.0), 1.0))


def contraction_profile(kernel, max_lag: int) -> np.ndarray:
    """delta(P^j) for j = 1..max_lag."""
    if max_lag < 1:
        raise InvalidInputError("max_lag must be at least 1.", {"max_lag": max_lag})
    kernel = np.asarray(kernel, dtype=float)
    power = kernel.copy()
    profile = np.empty(max_lag)
    for j in range(max_lag):
        profile[j] = dobrushin_coefficient(power)
        power = power @ kernel
    # delta is submultiplicative, so the exact sequence never increases
    return np.minimum.accumulate(profile)


def mixing_time_from_profile(profile) -> Optional[float]:
    """Smallest -j / ln delta_j over lags that contract; None when none do."""
    best = None
    for j, delta in enumerate(np.asarray(profile, dtype=float), start=1):
        if delta >= 1.0:
            continue
        candidate = 0.0 if delta <= 0.0 else -j / math.log(delta)
        best = candidate if best is None else min(best, candidate)
    return best


@dataclass(frozen=True)
class MixingEstimate:
    t_mix: float
    per_kernel: Dict[str, float]
    max_lag: int

    def to_dict(self) -> dict:
        return {"t_mix": self.t_mix, "per_kernel": dict(self.per_kernel), "max_lag": self.max_lag}


def _labelled_kernels(spec: FiniteMdpSpec) -> List[tuple]:
    labelled = []
    starts = [1] + [start for start, _ in spec.schedule]
    for start, regime in zip(starts, spec.regimes):
        suffix = "" if spec.is_homogeneous else f"@{start}"
        labelled.append((f"w=0{suffix}", regime.kernel0))
        labelled.append((f"w=1{suffix}", regime.kernel1))
    return labelled


def estimate_mixing(spec: FiniteMdpSpec, max_lag: Optional[int] = None) -> MixingEstimate:
    max_lag = max_lag or get_max_lag()
    per_kernel: Dict[str, float] = {}
    for label, kernel in _labelled_kernels(spec):
        t_mix = mixing_time_from_profile(contraction_profile(kernel, max_lag))
        if t_mix is None:
            raise NonMixingError(
                f"Kernel {label} shows no contraction within {max_lag} steps.",
                {"kernel": label, "max_lag": max_lag},
            )
        per_kernel[label] = t_mix
    t_mix = max(per_kernel.values())
    logger.debug("Mixing times per kernel: %s", per_kernel)
    return MixingEstimate(t_mix=t_mix, per_kernel=per_kernel, max_lag=max_lag)


def estimate_mixing_time(spec: FiniteMdpSpec, max_lag: Optional[int] = None) -> float:
    return estimate_mixing(spec, max_lag).t_mix


@dataclass(frozen=True)
class GeometricFit:
    rate: float
    slope: float
    intercept: float
    r_squared: float
    lags: int

    @property
    def implied_t_mix(self) -> float:
        return math.inf if self.slope >= 0 else -1.0 / self.slope

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "lags": self.lags,
            "implied_t_mix": self.implied_t_mix,
        }


def fit_geometric_decay(profile, min_points: int = 3, start_lag: int = 1) -> GeometricFit:
    """Least-squares fit of ln delta_j = a + j ln rho over contracting lags j >= start_lag."""
    profile = np.asarray(profile, dtype=float)
    lags = np.arange(1, profile.size + 1)
    usable = (profile < 1.0) & (profile > DECAY_FLOOR) & (lags >= start_lag)
    if usable.sum() < min_points:
        raise InvalidInputError(
            f"Need at least {min_points} lags with {DECAY_FLOOR} < delta < 1 to fit a decay rate.",
            {"usable_lags": int(usable.sum())},
        )
    fit = stats.linregress(lags[usable], np.log(profile[usable]))
    return GeometricFit(
        rate=float(math.exp(fit.slope)),
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        r_squared=float(fit.rvalue ** 2),
        lags=int(usable.sum()),
    )


def mixing_report(spec: FiniteMdpSpec, max_lag: Optional[int] = None) -> dict:
    """Contraction profiles, mixing times and decay fits for every kernel of a spec."""
    max_lag = max_lag or get_max_lag()
    kernels = []
    for label, kernel in _labelled_kernels(spec):
        profile = contraction_profile(kernel, max_lag)
        entry = {
            "kernel": label,
            "profile": [float(v) for v in profile],
            "t_mix": mixing_time_from_profile(profile),
        }
        try:
            entry["decay_fit"] = fit_geometric_decay(profile).to_dict()
        except InvalidInputError:
            entry["decay_fit"] = None
        kernels.append(entry)
    contracting = [k["t_mix"] for k in kernels if k["t_mix"] is not None]
    return {
        "max_lag": max_lag,
        "t_mix": max(contracting) if len(contracting) == len(kernels) else None,
        "kernels": kernels,
    }
