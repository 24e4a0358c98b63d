"""
Ground-truth estimands.

Pure-policy means are computed exactly by propagating state distributions
under always-treat and always-control. By default the chain is taken to have
run under the pure policy since the infinite past, so in a time-homogeneous
spec every period sits at the stationary distribution of that action; a
finite `pre_period` instead starts that many transitions before period 1
from the initial distribution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.design import AssignmentPlan, SwitchbackDesign, filtered_index_set
from app.errors import InvalidInputError, NonErgodicError
from app.mdp import FiniteMdpSpec, simulate_batch, step_distribution
from app.rng import derive_seed

logger = logging.getLogger(__name__)

STATIONARY_TOL = 1e-12
RANK_TOL = 1e-10


def stationary_distribution(kernel, tol: float = STATIONARY_TOL) -> np.ndarray:
    """Unique pi with pi P = pi, from a direct linear solve."""
    P = np.asarray(kernel, dtype=float)
    n = P.shape[0]
    generator = np.eye(n) - P
    if n > 1 and np.linalg.matrix_rank(generator, tol=RANK_TOL) < n - 1:
        raise NonErgodicError(
            "Kernel has more than one closed class; stationary distribution is not unique.",
            {"states": n},
        )
    system = generator.T.copy()
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = np.linalg.solve(system, rhs)
    # one round of iterative refinement
    pi += np.linalg.solve(system, rhs - system @ pi)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = float(np.abs(pi @ P - pi).sum())
    if residual >= tol:
        logger.warning("Stationary solve residual %.3e exceeds tolerance %.1e", residual, tol)
    return pi


def _start_distribution(spec: FiniteMdpSpec, w: int, pre_period: Optional[int]) -> np.ndarray:
    """Distribution of S_1 under the pure policy w."""
    kernel = spec.base_regime.kernel(w)
    if pre_period is None:
        return stationary_distribution(kernel)
    if pre_period < 0:
        raise InvalidInputError("pre_period must be nonnegative.", {"pre_period": pre_period})
    dist = np.array(spec.initial_dist)
    for _ in range(pre_period):
        dist = step_distribution(dist, kernel)
    return dist


def pure_mean_trace(
    spec: FiniteMdpSpec, w: int, horizon: int, pre_period: Optional[int] = None
) -> np.ndarray:
    """E[Y_t] under the pure policy w for t = 1..horizon."""
    if horizon < 1:
        raise InvalidInputError("horizon must be at least 1.", {"horizon": horizon})
    dist = _start_distribution(spec, w, pre_period)
    if spec.is_homogeneous and pre_period is None:
        return np.full(horizon, float(dist @ spec.outcome_mean[:, w]))
    regimes = spec.regimes
    index = spec.regime_index(np.arange(1, horizon + 1))
    trace = np.empty(horizon)
    for j in range(horizon):
        regime = regimes[index[j]]
        trace[j] = dist @ regime.outcome_mean[:, w]
        dist = dist @ regime.kernel(w)
    return trace


def pure_outcome_mean(
    spec: FiniteMdpSpec, w: int, t: int = 1, pre_period: Optional[int] = None
) -> float:
    if t < 1:
        raise InvalidInputError("t must be a positive period.", {"t": t})
    return float(pure_mean_trace(spec, w, t, pre_period)[-1])


def tau_trace(spec: FiniteMdpSpec, horizon: int, pre_period: Optional[int] = None) -> np.ndarray:
    """Stable effects tau_t for t = 1..horizon."""
    return pure_mean_trace(spec, 1, horizon, pre_period) - pure_mean_trace(spec, 0, horizon, pre_period)


def stable_effect(spec: FiniteMdpSpec, t: int = 1, pre_period: Optional[int] = None) -> float:
    return pure_outcome_mean(spec, 1, t, pre_period) - pure_outcome_mean(spec, 0, t, pre_period)


def gate(spec: FiniteMdpSpec, horizon: int, pre_period: Optional[int] = None) -> float:
    """Average of tau_t over t = 1..horizon."""
    return float(tau_trace(spec, horizon, pre_period).mean())


def fate(spec: FiniteMdpSpec, index_set: Sequence[int], pre_period: Optional[int] = None) -> float:
    """Average of tau_t over a set of 1-based periods."""
    index = np.asarray(index_set, dtype=np.int64)
    if index.size == 0:
        raise InvalidInputError("FATE needs a non-empty index set.")
    if index.min() < 1:
        raise InvalidInputError("FATE periods are 1-based.", {"min_index": int(index.min())})
    trace = tau_trace(spec, int(index.max()), pre_period)
    return float(trace[index - 1].mean())


@dataclass(frozen=True, eq=False)
class EstimandReport:
    tau_trace: np.ndarray
    tau_gate: float
    tau_fate: float
    filter_set: np.ndarray
    psi_hat: float

    def to_dict(self, include_trace: bool = False) -> dict:
        record = {
            "tau_gate": self.tau_gate,
            "tau_fate": self.tau_fate,
            "psi_hat": self.psi_hat,
            "filter_size": int(self.filter_set.size),
        }
        if include_trace:
            record["tau_trace"] = [float(v) for v in self.tau_trace]
        return record


def estimand_report(
    spec: FiniteMdpSpec, design: SwitchbackDesign, pre_period: Optional[int] = None
) -> EstimandReport:
    """GATE, FATE and the trace spread over the blocked horizon 1..k*l."""
    trace = tau_trace(spec, design.used_horizon, pre_period)
    index = filtered_index_set(design)
    return EstimandReport(
        tau_trace=trace,
        tau_gate=float(trace.mean()),
        tau_fate=float(trace[index - 1].mean()),
        filter_set=index,
        psi_hat=float(trace.max() - trace.min()),
    )


def mc_pure_outcome_mean(
    spec: FiniteMdpSpec,
    w: int,
    t: int,
    reps: int,
    burn_steps: int,
    seed: int,
) -> tuple:
    """
    Monte Carlo estimate of the pure-policy mean at period t.

    The chain starts from initial_dist burn_steps + 1 transitions before t.

    Returns:
        (mean, standard_error)
    """
    if reps < 1 or burn_steps < 0:
        raise InvalidInputError("reps must be >= 1 and burn_steps >= 0.", {"reps": reps, "burn_steps": burn_steps})
    treatments = np.full((reps, burn_steps + 1), int(w))
    seeds = [derive_seed(seed, "mc_pure", w, t, r) for r in range(reps)]
    _, outcomes = simulate_batch(spec, treatments, seeds, start_time=t - burn_steps)
    final = outcomes[:, -1]
    se = float(final.std(ddof=1) / np.sqrt(reps)) if reps > 1 else float("nan")
    return float(final.mean()), se


def expected_outcome_path(spec: FiniteMdpSpec, treatments, start_time: int = 1) -> np.ndarray:
    """E[Y_t | W] for every row of a treatment matrix (exact, by propagation)."""
    W = np.atleast_2d(np.asarray(treatments, dtype=np.int64))
    reps, horizon = W.shape
    regimes = spec.regimes
    index = spec.regime_index(start_time + np.arange(horizon))
    pre = spec.regimes[int(spec.regime_index([start_time - 1])[0])]

    def advance(dist, regime, w):
        return np.where(w[:, None] == 1, dist @ regime.kernel1, dist @ regime.kernel0)

    dist = np.tile(spec.initial_dist, (reps, 1))
    dist = advance(dist, pre, W[:, 0])
    path = np.empty((reps, horizon))
    for j in range(horizon):
        regime = regimes[index[j]]
        path[:, j] = np.where(
            W[:, j] == 1, dist @ regime.outcome_mean[:, 1], dist @ regime.outcome_mean[:, 0]
        )
        dist = advance(dist, regime, W[:, j])
    return path


def block_pure_means(
    spec: FiniteMdpSpec, design: SwitchbackDesign, pre_period: Optional[int] = None
) -> np.ndarray:
    """(k, 2) array: per block, the pure-policy mean over its kept periods."""
    k, l, b = design.block_count, design.block_length, design.burn_in
    out = np.empty((k, 2))
    for w in (0, 1):
        trace = pure_mean_trace(spec, w, design.used_horizon, pre_period)
        out[:, w] = trace.reshape(k, l)[:, b:].mean(axis=1)
    return out


@dataclass(frozen=True, eq=False)
class BlockCounterfactuals:
    """
    Per-block counterfactual means, indexed [block, w].

    pure: pure-policy means over kept periods.
    forced_exact: E[block average | plan with that block forced to w].
    forced_mc / forced_se: Monte Carlo version of forced_exact.
    """

    pure: np.ndarray
    forced_exact: np.ndarray
    forced_mc: np.ndarray
    forced_se: np.ndarray

    def to_dict(self) -> dict:
        return {
            name: getattr(self, name).tolist()
            for name in ("pure", "forced_exact", "forced_mc", "forced_se")
        }


def _forced_paths(plan: AssignmentPlan, design: SwitchbackDesign, block: int, w: int) -> np.ndarray:
    l = design.block_length
    forced = np.array(plan.treatments[: (block + 1) * l], dtype=np.int64)
    forced[block * l:] = w
    return forced


def block_counterfactuals(
    spec: FiniteMdpSpec,
    design: SwitchbackDesign,
    plan: AssignmentPlan,
    reps: int,
    seed: int,
    pre_period: Optional[int] = None,
) -> BlockCounterfactuals:
    if reps < 1:
        raise InvalidInputError("block_counterfactuals needs reps >= 1.", {"reps": reps})
    k, l, b = design.block_count, design.block_length, design.burn_in
    pure = block_pure_means(spec, design, pre_period)
    exact = np.empty((k, 2))
    mc = np.empty((k, 2))
    se = np.empty((k, 2))
    for i in range(k):
        for w in (0, 1):
            path = _forced_paths(plan, design, i, w)
            exact[i, w] = expected_outcome_path(spec, path)[0, i * l + b:].mean()
            seeds = [derive_seed(seed, "forced", i, w, r) for r in range(reps)]
            _, outcomes = simulate_batch(spec, np.tile(path, (reps, 1)), seeds)
            averages = outcomes[:, i * l + b:].mean(axis=1)
            mc[i, w] = averages.mean()
            se[i, w] = averages.std(ddof=1) / np.sqrt(reps) if reps > 1 else np.nan
    return BlockCounterfactuals(pure=pure, forced_exact=exact, forced_mc=mc, forced_se=se)


def forced_block_means(spec: FiniteMdpSpec, design: SwitchbackDesign, treatments) -> np.ndarray:
    """
    Exact E[block average | W] for each row of a treatment matrix.

    Returns:
        (R, k) array; row r uses the plan's realized treatments.
    """
    path = expected_outcome_path(spec, treatments)
    k, l, b = design.block_count, design.block_length, design.burn_in
    return path[:, : k * l].reshape(path.shape[0], k, l)[:, :, b:].mean(axis=2)
