"""
Closed-form bias, variance and MSE bounds with rate-optimal design rules.

With rho = exp(-1/t_mix) (rho = 0 when t_mix = 0, so rho**0 = 1):

    mixing bias   4 Lambda rho^b / ((1 - rho)(l - b))
    burn-in bias  Psi b / l
    variance      12 Lambda^2 / k
                  + 4 sigma^2 / (k (l - b))
                  + 16 Lambda^2 rho^b / ((1 - rho)^2 k (l - b)^2)

FATE uses the mixing bias alone; GATE adds the burn-in term. Lower-order
terms (those decaying like 2^-k or 1/k^2) are left out.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Literal, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from app.design import SwitchbackDesign
from app.errors import InvalidInputError
from app.mdp import FiniteMdpSpec, lambda_bound
from app.mixing import estimate_mixing_time
from app.oracle import tau_trace

logger = logging.getLogger(__name__)

Target = Literal["GATE", "FATE"]
TARGETS = ("GATE", "FATE")
LOWER_ORDER_NOTE = "terms of order 2^-k and 1/k^2 are excluded"
GATE_BLOCK_CONSTANT = (4.0 / 3.0) ** (1.0 / 3.0)
DIVISOR_SNAP = 0.10


class ModelBounds(BaseModel):
    """Problem constants the bounds depend on."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lam: float = Field(ge=0.0, description="max |mu(s, w)|")
    psi: float = Field(default=0.0, ge=0.0, description="spread of the stable-effect trace")
    sigma_sq: float = Field(default=0.0, ge=0.0, description="noise variance")
    t_mix: float = Field(default=0.0, ge=0.0)
    sigma0_sq: float = Field(default=0.0, ge=0.0)
    gamma0: float = Field(default=math.inf, ge=0.0)
    c_star: float = 0.0

    @property
    def rho(self) -> float:
        return math.exp(-1.0 / self.t_mix) if self.t_mix > 0 else 0.0

    def rho_pow(self, b: int) -> float:
        if self.t_mix > 0:
            return math.exp(-b / self.t_mix)
        return 1.0 if b == 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "Lambda": self.lam,
            "Psi": self.psi,
            "sigma_sq": self.sigma_sq,
            "t_mix": self.t_mix,
            "sigma0_sq": self.sigma0_sq,
            "Gamma0": self.gamma0 if math.isfinite(self.gamma0) else None,
            "C_star": self.c_star,
        }


def _check_lb(l: int, b: int) -> None:
    if b < 0 or l <= b:
        raise InvalidInputError("Bounds need 0 <= b < l.", {"l": l, "b": b})


def mixing_bias_bound(mb: ModelBounds, l: int, b: int) -> float:
    _check_lb(l, b)
    return 4.0 * mb.lam / (1.0 - mb.rho) * mb.rho_pow(b) / (l - b)


def burnin_bias_bound(mb: ModelBounds, l: int, b: int) -> float:
    _check_lb(l, b)
    return mb.psi * b / l


class VarianceTerms(NamedTuple):
    clustering: float
    noise: float
    carryover: float

    @property
    def total(self) -> float:
        return self.clustering + self.noise + self.carryover


def variance_bound(mb: ModelBounds, k: int, l: int, b: int) -> VarianceTerms:
    _check_lb(l, b)
    if k < 1:
        raise InvalidInputError("variance_bound needs k >= 1.", {"k": k})
    kept = l - b
    lam_sq = mb.lam ** 2
    return VarianceTerms(
        clustering=12.0 * lam_sq / k,
        noise=4.0 * mb.sigma_sq / (k * kept),
        carryover=16.0 * lam_sq * mb.rho_pow(b) / ((1.0 - mb.rho) ** 2 * k * kept ** 2),
    )


@dataclass(frozen=True)
class BoundsReport:
    target: str
    horizon: int
    block_length: int
    burn_in: int
    block_count: int
    mixing_bias: float
    burnin_bias: float
    var_clustering: float
    var_noise: float
    var_carryover: float
    var_total: float
    mse_bound_gate: float
    mse_bound_fate: float

    @property
    def mse_bound(self) -> float:
        return self.mse_bound_gate if self.target == "GATE" else self.mse_bound_fate

    @property
    def bias_bound(self) -> float:
        return self.mixing_bias + (self.burnin_bias if self.target == "GATE" else 0.0)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "T": self.horizon,
            "l": self.block_length,
            "b": self.burn_in,
            "k": self.block_count,
            "mixing_bias": self.mixing_bias,
            "burnin_bias": self.burnin_bias,
            "var_clustering": self.var_clustering,
            "var_noise": self.var_noise,
            "var_carryover": self.var_carryover,
            "var_total": self.var_total,
            "mse_bound_gate": self.mse_bound_gate,
            "mse_bound_fate": self.mse_bound_fate,
            "mse_bound": self.mse_bound,
            "note": LOWER_ORDER_NOTE,
        }


def _check_target(target: str) -> str:
    target = target.upper()
    if target not in TARGETS:
        raise InvalidInputError(f"target must be one of {TARGETS}, got {target!r}.", {"target": target})
    return target


def mse_bound(mb: ModelBounds, design: SwitchbackDesign, target: str = "GATE") -> BoundsReport:
    return _assemble(
        mb, design.horizon, design.block_length, design.burn_in, design.block_count, _check_target(target)
    )


def _assemble(mb: ModelBounds, horizon: int, l: int, b: int, k: int, target: str) -> BoundsReport:
    mixing = mixing_bias_bound(mb, l, b)
    burnin = burnin_bias_bound(mb, l, b)
    var = variance_bound(mb, k, l, b)
    return BoundsReport(
        target=target,
        horizon=horizon,
        block_length=l,
        burn_in=b,
        block_count=k,
        mixing_bias=mixing,
        burnin_bias=burnin,
        var_clustering=var.clustering,
        var_noise=var.noise,
        var_carryover=var.carryover,
        var_total=var.total,
        mse_bound_gate=(mixing + burnin) ** 2 + var.total,
        mse_bound_fate=mixing ** 2 + var.total,
    )


def round_half_down(x: float) -> int:
    return int(math.ceil(x - 0.5))


def snap_block_length(l_star: float, horizon: int) -> int:
    """Nearest divisor of T within 10% of l*, else l* rounded half-down (at least 2)."""
    divisors = [d for d in range(2, horizon + 1) if horizon % d == 0]
    if divisors:
        nearest = min(divisors, key=lambda d: (abs(d - l_star), d))
        if abs(nearest - l_star) <= DIVISOR_SNAP * l_star:
            return nearest
    return max(2, min(horizon, round_half_down(l_star)))


@dataclass(frozen=True)
class DesignRecommendation:
    target: str
    horizon: int
    l_star: float
    b_star: float
    block_length: int
    burn_in: int

    @property
    def block_count(self) -> int:
        return self.horizon // self.block_length

    def design(self, strict: bool = False) -> SwitchbackDesign:
        return SwitchbackDesign(self.horizon, self.block_length, self.burn_in, strict=strict)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "T": self.horizon,
            "l_star": self.l_star,
            "b_star": self.b_star,
            "l": self.block_length,
            "b": self.burn_in,
            "k": self.block_count,
        }


def optimal_design_gate(horizon: int, t_mix: float) -> DesignRecommendation:
    """No burn-in and l* = (4/3)^(1/3) (1 - rho)^(-2/3) T^(1/3)."""
    if horizon < 2 or t_mix < 0:
        raise InvalidInputError("Need T >= 2 and t_mix >= 0.", {"T": horizon, "t_mix": t_mix})
    rho = math.exp(-1.0 / t_mix) if t_mix > 0 else 0.0
    l_star = GATE_BLOCK_CONSTANT * (1.0 - rho) ** (-2.0 / 3.0) * horizon ** (1.0 / 3.0)
    return DesignRecommendation(
        target="GATE",
        horizon=horizon,
        l_star=l_star,
        b_star=0.0,
        block_length=snap_block_length(l_star, horizon),
        burn_in=0,
    )


def optimal_design_fate(horizon: int, mb: ModelBounds) -> DesignRecommendation:
    """b* = (t_mix / 2) ln T + C*, followed by a kept window of sigma^2 / (3 Lambda^2)."""
    if horizon < 2:
        raise InvalidInputError("Need T >= 2.", {"T": horizon})
    if mb.lam <= 0:
        raise InvalidInputError("The FATE design rule needs Lambda > 0.", {"Lambda": mb.lam})
    b_star = mb.t_mix / 2.0 * math.log(horizon) + mb.c_star
    gap_star = mb.sigma_sq / (3.0 * mb.lam ** 2)
    b = max(0, round_half_down(b_star))
    l = max(2, b + max(1, round_half_down(gap_star)))
    if l > horizon:
        raise InvalidInputError(
            f"Recommended block length {l} exceeds the horizon {horizon}.", {"T": horizon, "l": l}
        )
    return DesignRecommendation(
        target="FATE",
        horizon=horizon,
        l_star=b_star + gap_star,
        b_star=b_star,
        block_length=l,
        burn_in=b,
    )


def recommend_design(horizon: int, mb: ModelBounds, target: str) -> DesignRecommendation:
    if _check_target(target) == "GATE":
        return optimal_design_gate(horizon, mb.t_mix)
    return optimal_design_fate(horizon, mb)


@dataclass(frozen=True)
class DesignSearchResult:
    target: str
    horizon: int
    block_length: int
    burn_in: int
    mse_bound: float

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "T": self.horizon,
            "l": self.block_length,
            "b": self.burn_in,
            "mse_bound": self.mse_bound,
        }


def _mse_over_burn_ins(mb: ModelBounds, horizon: int, l: int, burns: np.ndarray, target: str) -> np.ndarray:
    """MSE bound at block length l for every burn-in in `burns` at once."""
    k = horizon // l
    kept = l - burns
    decay = np.exp(-burns / mb.t_mix) if mb.t_mix > 0 else (burns == 0).astype(float)
    lam_sq = mb.lam ** 2
    mixing = 4.0 * mb.lam / (1.0 - mb.rho) * decay / kept
    variance = (
        12.0 * lam_sq / k
        + 4.0 * mb.sigma_sq / (k * kept)
        + 16.0 * lam_sq * decay / ((1.0 - mb.rho) ** 2 * k * kept ** 2)
    )
    bias = mixing + mb.psi * burns / l if target == "GATE" else mixing
    return bias ** 2 + variance


def search_design(
    mb: ModelBounds,
    horizon: int,
    target: str = "GATE",
    block_lengths: Optional[Iterable[int]] = None,
    burn_ins: Optional[Iterable[int]] = None,
) -> DesignSearchResult:
    """
    Minimizer of the MSE bound over a grid of (l, b).

    Every admissible burn-in of a block length is scored in one vectorized
    pass, so the default FATE grid (all 0 <= b < l <= T) stays fast at T = 1e4.
    Ties go to the smallest l, then the smallest b.
    """
    target = _check_target(target)
    lengths = list(block_lengths) if block_lengths is not None else range(2, horizon + 1)
    burns = np.asarray(sorted(set(burn_ins)), dtype=float) if burn_ins is not None else None
    best: Optional[DesignSearchResult] = None
    for l in lengths:
        if l < 2 or l > horizon:
            continue
        if burns is not None:
            candidates = burns[(burns >= 0) & (burns < l)]
        elif target == "GATE":
            candidates = np.zeros(1)
        else:
            candidates = np.arange(l, dtype=float)
        if candidates.size == 0:
            continue
        scores = _mse_over_burn_ins(mb, horizon, l, candidates, target)
        i = int(np.argmin(scores))
        if best is None or scores[i] < best.mse_bound:
            best = DesignSearchResult(target, horizon, l, int(candidates[i]), float(scores[i]))
    if best is None:
        raise InvalidInputError("No admissible (l, b) in the search grid.", {"T": horizon})
    logger.debug("search_design %s T=%d -> l=%d b=%d", target, horizon, best.block_length, best.burn_in)
    return best


def gate_rate_bound(horizon: int, mb: ModelBounds) -> float:
    """Asymptotic GATE rate: 48^(2/3) Lambda^2 (1 - rho)^(-2/3) T^(-2/3)."""
    if horizon < 1:
        raise InvalidInputError("horizon must be positive.", {"T": horizon})
    return 48.0 ** (2.0 / 3.0) * mb.lam ** 2 * (1.0 - mb.rho) ** (-2.0 / 3.0) * horizon ** (-2.0 / 3.0)


def fate_rate_bound(horizon: int, mb: ModelBounds) -> float:
    """Asymptotic FATE rate: 6 Lambda^2 t_mix ln(T) / T."""
    if horizon < 1:
        raise InvalidInputError("horizon must be positive.", {"T": horizon})
    return 6.0 * mb.lam ** 2 * mb.t_mix * math.log(horizon) / horizon


def counterfactual_gap_bound(mb: ModelBounds, l: int, b: int) -> float:
    """Per-block bound on |M_i(w) - mu_i(w)|: 2 Lambda / (l - b) * sum_{s=b+1..l} rho^s."""
    _check_lb(l, b)
    total = sum(mb.rho_pow(s) for s in range(b + 1, l + 1))
    return 2.0 * mb.lam * total / (l - b)


class RateFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float


def fit_rate(points: Sequence[Tuple[float, float]]) -> RateFit:
    """OLS of ln(mse) on ln(T)."""
    if len(points) < 3:
        raise InvalidInputError("fit_rate needs at least 3 points.", {"points": len(points)})
    horizons = np.array([p[0] for p in points], dtype=float)
    values = np.array([p[1] for p in points], dtype=float)
    if (horizons <= 0).any() or (values <= 0).any():
        raise InvalidInputError("fit_rate needs strictly positive T and MSE values.")
    fit = stats.linregress(np.log(horizons), np.log(values))
    return RateFit(slope=float(fit.slope), intercept=float(fit.intercept), r_squared=float(fit.rvalue ** 2))


def model_bounds_from_spec(
    spec: FiniteMdpSpec,
    horizon: int,
    c_star: float = 0.0,
    max_lag: Optional[int] = None,
    pre_period: Optional[int] = None,
) -> ModelBounds:
    """
    Problem constants read off a spec.

    Gamma0 is finite only for uniform noise, whose support is bounded.
    """
    trace = tau_trace(spec, horizon, pre_period)
    lam = lambda_bound(spec)
    sigma_sq = spec.noise_sd ** 2
    gamma0 = lam + math.sqrt(3.0) * spec.noise_sd if spec.noise_law == "uniform" else math.inf
    return ModelBounds(
        lam=lam,
        psi=float(trace.max() - trace.min()),
        sigma_sq=sigma_sq,
        t_mix=estimate_mixing_time(spec, max_lag),
        sigma0_sq=sigma_sq,
        gamma0=gamma0,
        c_star=c_star,
    )


def bound_curves(mb: ModelBounds, horizons: Iterable[int], target: str = "GATE") -> pd.DataFrame:
    """Long-format bound components at the recommended design for each T."""
    rows: List[dict] = []
    for horizon in horizons:
        rec = recommend_design(horizon, mb, target)
        report = mse_bound(mb, rec.design(), target)
        for component in (
            "mixing_bias", "burnin_bias", "var_clustering", "var_noise",
            "var_carryover", "var_total", "mse_bound",
        ):
            rows.append({
                "T": horizon,
                "l": rec.block_length,
                "b": rec.burn_in,
                "component": component,
                "value": getattr(report, component),
            })
    return pd.DataFrame(rows, columns=["T", "l", "b", "component", "value"])
