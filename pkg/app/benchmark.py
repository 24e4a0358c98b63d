"""
Ride-sharing style benchmark chain.

States are pairs (m, h): a market level m in 1..M that follows its own
Markov chain independently of treatment, and a hidden congestion level h in
0..cap that moves up by m with probability up_prob(w) and down by m
otherwise, clamped to [0, cap]. The outcome mean is h + effect_multiplier*w*h.

State (m, h) is stored at index (m - 1) * (cap + 1) + h.
"""

from __future__ import annotations

import logging
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.errors import InvalidInputError
from app.mdp import FiniteMdpSpec

logger = logging.getLogger(__name__)


class BenchmarkParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    market_states: int = Field(default=3, ge=1)
    hidden_cap: int = Field(default=10, ge=1)
    stay_prob: float = Field(default=0.6, ge=0.0, le=1.0)
    up_prob_treated: float = Field(default=0.7, ge=0.0, le=1.0)
    up_prob_control: float = Field(default=0.3, ge=0.0, le=1.0)
    effect_multiplier: float = 0.5
    noise_sd: float = Field(default=3.0, ge=0.0)
    noise_law: Literal["gaussian", "uniform"] = "gaussian"
    initial_hidden: int = Field(default=0, ge=0)
    initial_market: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_ranges(self) -> "BenchmarkParams":
        if self.initial_hidden > self.hidden_cap:
            raise ValueError("initial_hidden must not exceed hidden_cap")
        if self.initial_market is not None and self.initial_market > self.market_states:
            raise ValueError("initial_market must not exceed market_states")
        if self.market_states == 1 and self.stay_prob != 1.0:
            raise ValueError("a single market state must have stay_prob = 1")
        return self

    @property
    def state_count(self) -> int:
        return self.market_states * (self.hidden_cap + 1)

    def prose_variant(self) -> "BenchmarkParams":
        """Same chain with the market staying put two times in three."""
        return self.model_copy(update={"stay_prob": 2.0 / 3.0})


def benchmark_state(m: int, h: int, params: BenchmarkParams) -> int:
    if not (1 <= m <= params.market_states and 0 <= h <= params.hidden_cap):
        raise InvalidInputError(f"({m}, {h}) is not a benchmark state.", {"m": m, "h": h})
    return (m - 1) * (params.hidden_cap + 1) + h


def decode_benchmark_state(index: int, params: BenchmarkParams) -> Tuple[int, int]:
    if not 0 <= index < params.state_count:
        raise InvalidInputError(f"State index {index} out of range.", {"index": index})
    m, h = divmod(int(index), params.hidden_cap + 1)
    return m + 1, h


def market_kernel(params: BenchmarkParams) -> np.ndarray:
    M = params.market_states
    if M == 1:
        return np.ones((1, 1))
    kernel = np.full((M, M), (1.0 - params.stay_prob) / (M - 1))
    np.fill_diagonal(kernel, params.stay_prob)
    return kernel


def _joint_kernel(params: BenchmarkParams, up_prob: float) -> np.ndarray:
    M, cap = params.market_states, params.hidden_cap
    market = market_kernel(params)
    kernel = np.zeros((params.state_count, params.state_count))
    for m in range(1, M + 1):
        for h in range(cap + 1):
            row = benchmark_state(m, h, params)
            h_up, h_down = min(h + m, cap), max(h - m, 0)
            for m_next in range(1, M + 1):
                p_market = market[m - 1, m_next - 1]
                kernel[row, benchmark_state(m_next, h_up, params)] += p_market * up_prob
                kernel[row, benchmark_state(m_next, h_down, params)] += p_market * (1.0 - up_prob)
    # absorb float drift so rows pass the stochasticity check
    return kernel / kernel.sum(axis=1, keepdims=True)


def build_benchmark(params: Optional[BenchmarkParams] = None) -> FiniteMdpSpec:
    params = params or BenchmarkParams()
    n = params.state_count
    hidden = np.tile(np.arange(params.hidden_cap + 1, dtype=float), params.market_states)
    outcome_mean = np.column_stack([hidden, hidden + params.effect_multiplier * hidden])

    initial = np.zeros(n)
    markets = [params.initial_market] if params.initial_market else range(1, params.market_states + 1)
    for m in markets:
        initial[benchmark_state(m, params.initial_hidden, params)] = 1.0
    initial /= initial.sum()

    logger.debug("Built benchmark chain with %d states", n)
    return FiniteMdpSpec(
        state_count=n,
        kernel0=_joint_kernel(params, params.up_prob_control),
        kernel1=_joint_kernel(params, params.up_prob_treated),
        outcome_mean=outcome_mean,
        noise_sd=params.noise_sd,
        initial_dist=initial,
        noise_law=params.noise_law,
        name="benchmark",
    )
