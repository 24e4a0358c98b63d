import math
import time

import numpy as np
import pytest
from pydantic import ValidationError

from app.benchmark import BenchmarkParams, build_benchmark
from app.bounds import (
    ModelBounds,
    bound_curves,
    burnin_bias_bound,
    counterfactual_gap_bound,
    fate_rate_bound,
    fit_rate,
    gate_rate_bound,
    mixing_bias_bound,
    model_bounds_from_spec,
    mse_bound,
    optimal_design_fate,
    optimal_design_gate,
    recommend_design,
    round_half_down,
    search_design,
    snap_block_length,
    variance_bound,
)
from app.design import SwitchbackDesign
from app.errors import InvalidInputError

HORIZONS = [1_000, 10_000, 100_000, 1_000_000]


# --- Model constants ---

def test_rho_conventions():
    assert ModelBounds(lam=1.0, t_mix=0.0).rho == 0.0
    assert ModelBounds(lam=1.0, t_mix=0.0).rho_pow(0) == 1.0
    assert ModelBounds(lam=1.0, t_mix=0.0).rho_pow(3) == 0.0
    assert ModelBounds(lam=1.0, t_mix=2.0).rho == pytest.approx(math.exp(-0.5))


def test_model_bounds_validation():
    with pytest.raises(ValidationError):
        ModelBounds(lam=-1.0)
    assert ModelBounds(lam=1.0).to_dict()["Gamma0"] is None


# --- Bias and variance terms ---

def test_bias_terms():
    assert mixing_bias_bound(ModelBounds(lam=1.0), 10, 0) == pytest.approx(0.4)
    assert burnin_bias_bound(ModelBounds(lam=1.0, psi=2.0), 10, 5) == pytest.approx(1.0)
    with pytest.raises(InvalidInputError):
        mixing_bias_bound(ModelBounds(lam=1.0), 5, 5)


def test_mixing_bias_shifts_with_burn_in():
    mb = ModelBounds(lam=2.0, t_mix=3.0)
    ratio = mixing_bias_bound(mb, 25, 10) / mixing_bias_bound(mb, 20, 5)
    assert ratio == pytest.approx(math.exp(-5.0 / 3.0))


def test_variance_terms():
    terms = variance_bound(ModelBounds(lam=1.0, sigma_sq=9.0), k=10, l=5, b=2)
    assert terms.clustering == pytest.approx(1.2)
    assert terms.noise == pytest.approx(1.2)
    assert terms.carryover == 0.0
    assert terms.total == pytest.approx(2.4)
    with pytest.raises(InvalidInputError):
        variance_bound(ModelBounds(lam=1.0), k=0, l=5, b=0)


def test_bounds_grow_with_problem_constants():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        lam, t_mix, sigma_sq = rng.uniform(0.1, 10), rng.uniform(0.1, 20), rng.uniform(0, 10)
        l = int(rng.integers(2, 200))
        b = int(rng.integers(0, l))
        k = int(rng.integers(1, 500))
        small = ModelBounds(lam=lam, t_mix=t_mix, sigma_sq=sigma_sq, psi=1.0)
        large = ModelBounds(lam=2 * lam, t_mix=2 * t_mix, sigma_sq=2 * sigma_sq, psi=2.0)
        assert mixing_bias_bound(large, l, b) >= mixing_bias_bound(small, l, b)
        assert burnin_bias_bound(large, l, b) >= burnin_bias_bound(small, l, b)
        assert variance_bound(large, k, l, b).total >= variance_bound(small, k, l, b).total
        assert variance_bound(small, k + 1, l, b).total <= variance_bound(small, k, l, b).total


def test_mixing_bias_rises_in_burn_in_at_fixed_block_length():
    mb = ModelBounds(lam=1.0, t_mix=20.0)
    values = [mixing_bias_bound(mb, 10, b) for b in range(10)]
    assert values[0] == pytest.approx(8.202, abs=1e-3)
    assert values[-1] == pytest.approx(52.296, abs=1e-3)
    assert all(a < c for a, c in zip(values, values[1:]))


def test_mixing_bias_falls_in_burn_in_over_long_kept_windows():
    mb = ModelBounds(lam=1.0, t_mix=1.0)
    values = [mixing_bias_bound(mb, 50, b) for b in range(49)]
    assert all(a > c for a, c in zip(values, values[1:]))


def test_bound_directions_over_random_draws():
    rng = np.random.default_rng(11)
    horizon = 1000
    for _ in range(1000):
        mb = ModelBounds(
            lam=rng.uniform(0.1, 10), t_mix=rng.uniform(0.1, 20), sigma_sq=rng.uniform(0, 10), psi=1.0
        )
        l = int(rng.integers(3, 200))
        b = int(rng.integers(0, l - 1))
        mixing = mixing_bias_bound(mb, l, b)
        assert mixing_bias_bound(mb, l + 1, b) <= mixing
        assert mixing_bias_bound(mb, l + 1, b + 1) <= mixing
        if mb.rho * (l - b) / (l - b - 1) < 1.0:
            assert mixing_bias_bound(mb, l, b + 1) <= mixing
        assert burnin_bias_bound(mb, l, b + 1) > burnin_bias_bound(mb, l, b)
        assert (
            variance_bound(mb, horizon // (l + 1), l + 1, b).clustering
            >= variance_bound(mb, horizon // l, l, b).clustering
        )


def test_mse_bound_assembly():
    mb = ModelBounds(lam=1.0, t_mix=1.0)
    report = mse_bound(mb, SwitchbackDesign(1000, 15, strict=False), "GATE")
    assert report.block_count == 66
    assert report.mse_bound == pytest.approx(0.3625, abs=5e-4)
    assert report.mse_bound_gate == report.mse_bound_fate
    record = report.to_dict()
    assert record["note"]
    with pytest.raises(InvalidInputError):
        mse_bound(mb, SwitchbackDesign(1000, 10), "ATE")


def test_burn_in_bias_only_counts_for_gate():
    mb = ModelBounds(lam=1.0, psi=1.0, t_mix=1.0)
    design = SwitchbackDesign(100, 10, 4)
    gate_report = mse_bound(mb, design, "GATE")
    fate_report = mse_bound(mb, design, "FATE")
    assert gate_report.bias_bound == pytest.approx(fate_report.bias_bound + 0.4)
    assert gate_report.mse_bound > fate_report.mse_bound


# --- Design rules ---

def test_rounding_helpers():
    assert round_half_down(2.5) == 2
    assert round_half_down(2.51) == 3
    assert round_half_down(3.0) == 3
    assert snap_block_length(14.94, 1000) == 15
    assert snap_block_length(74.03, 10_000) == 80


@pytest.mark.parametrize(
    "horizon, t_mix, expected",
    [(1_000, 1.0, 15), (10_000, 1.0, 32), (1_000, 5.0, 34), (10_000, 5.0, 80), (1_000_000, 1.0, 160)],
)
def test_gate_block_length(horizon, t_mix, expected):
    rec = optimal_design_gate(horizon, t_mix)
    assert rec.block_length == expected
    assert rec.burn_in == 0


def test_gate_rule_is_close_to_discrete_optimum():
    for horizon, t_mix in [(1_000, 1.0), (10_000, 1.0), (1_000, 5.0)]:
        mb = ModelBounds(lam=1.0, t_mix=t_mix)
        rec = optimal_design_gate(horizon, t_mix)
        at_rule = mse_bound(mb, rec.design(), "GATE").mse_bound
        best = search_design(mb, horizon, "GATE").mse_bound
        assert best <= at_rule <= 1.10 * best


def test_search_design_matches_scalar_bounds():
    mb = ModelBounds(lam=1.0, sigma_sq=9.0, t_mix=2.0, psi=0.5)
    horizon = 120
    for target in ("GATE", "FATE"):
        scores = []
        for l in range(2, horizon + 1):
            for b in range(l) if target == "FATE" else [0]:
                bias = mixing_bias_bound(mb, l, b) + (burnin_bias_bound(mb, l, b) if target == "GATE" else 0.0)
                scores.append(bias ** 2 + variance_bound(mb, horizon // l, l, b).total)
        found = search_design(mb, horizon, target)
        assert found.mse_bound == pytest.approx(min(scores), rel=1e-12)
        design = SwitchbackDesign(horizon, found.block_length, found.burn_in, strict=False)
        assert mse_bound(mb, design, target).mse_bound == pytest.approx(found.mse_bound, rel=1e-12)


def test_search_design_respects_burn_in_grid():
    mb = ModelBounds(lam=1.0, sigma_sq=9.0, t_mix=1.0)
    found = search_design(mb, 1000, "FATE", block_lengths=[4, 6, 8], burn_ins=[2, 3, 7])
    assert found.burn_in in (2, 3)
    assert found.block_length in (4, 6, 8)
    with pytest.raises(InvalidInputError):
        search_design(mb, 1000, "FATE", block_lengths=[4], burn_ins=[4, 5])


def test_fate_search_scales_to_long_horizons():
    mb = ModelBounds(lam=1.0, sigma_sq=9.0, t_mix=1.0)
    start = time.perf_counter()
    found = search_design(mb, 10_000, "FATE")
    elapsed = time.perf_counter() - start
    assert elapsed < 15.0
    rule = optimal_design_fate(10_000, mb)
    at_rule = mse_bound(mb, rule.design(), "FATE").mse_bound
    assert found.mse_bound <= at_rule
    assert found.burn_in >= 1


@pytest.mark.parametrize(
    "horizon, burn_in, block_length",
    [(1_000, 3, 6), (10_000, 5, 8), (100_000, 6, 9), (1_000_000, 7, 10)],
)
def test_fate_design(horizon, burn_in, block_length):
    rec = optimal_design_fate(horizon, ModelBounds(lam=1.0, sigma_sq=9.0, t_mix=1.0))
    assert (rec.burn_in, rec.block_length) == (burn_in, block_length)


def test_fate_design_input_checks():
    with pytest.raises(InvalidInputError):
        optimal_design_fate(1000, ModelBounds(lam=0.0, t_mix=1.0))
    with pytest.raises(InvalidInputError):
        optimal_design_fate(5, ModelBounds(lam=1.0, sigma_sq=900.0, t_mix=1.0))


def test_recommend_design_dispatch():
    mb = ModelBounds(lam=1.0, sigma_sq=9.0, t_mix=1.0)
    assert recommend_design(1000, mb, "gate").target == "GATE"
    assert recommend_design(1000, mb, "FATE").burn_in == 3


# --- Rates ---

def test_fate_bound_rate():
    mb = ModelBounds(lam=1.0, sigma_sq=9.0, t_mix=1.0)
    points = [
        (T, mse_bound(mb, recommend_design(T, mb, "FATE").design(), "FATE").mse_bound)
        for T in HORIZONS
    ]
    assert points[1][1] == pytest.approx(0.019426, rel=1e-3)
    assert -1.0 < fit_rate(points).slope < -0.85


def test_gate_bound_rate():
    mb = ModelBounds(lam=1.0, t_mix=1.0)
    points = [
        (T, mse_bound(mb, recommend_design(T, mb, "GATE").design(), "GATE").mse_bound)
        for T in HORIZONS
    ]
    assert -0.75 < fit_rate(points).slope < -0.6


def test_closed_form_rates():
    mb = ModelBounds(lam=1.0, t_mix=1.0)
    assert gate_rate_bound(1000, mb) == pytest.approx(0.17932, rel=1e-3)
    assert fate_rate_bound(1000, mb) == pytest.approx(6 * math.log(1000) / 1000)


def test_counterfactual_gap_bound():
    assert counterfactual_gap_bound(ModelBounds(lam=1.0), 10, 0) == 0.0
    mb = ModelBounds(lam=1.0, t_mix=1.0)
    expected = 2.0 / 2 * (math.exp(-2) + math.exp(-3))
    assert counterfactual_gap_bound(mb, 3, 1) == pytest.approx(expected)


def test_fit_rate():
    points = [(T, 3.0 * T ** -0.5) for T in (10, 100, 1000, 10000)]
    fit = fit_rate(points)
    assert fit.slope == pytest.approx(-0.5)
    assert fit.intercept == pytest.approx(math.log(3.0))
    assert fit.r_squared == pytest.approx(1.0)
    with pytest.raises(InvalidInputError):
        fit_rate(points[:2])
    with pytest.raises(InvalidInputError):
        fit_rate([(10, 1.0), (100, 0.0), (1000, 0.5)])


# --- Spec-derived constants ---

def test_model_bounds_from_benchmark():
    mb = model_bounds_from_spec(build_benchmark(), 1000)
    assert mb.lam == 15.0
    assert mb.sigma_sq == 9.0
    assert mb.sigma0_sq == 9.0
    assert mb.psi == 0.0
    assert mb.t_mix > 0
    assert math.isinf(mb.gamma0)

    uniform = model_bounds_from_spec(build_benchmark(BenchmarkParams(noise_law="uniform")), 1000)
    assert uniform.gamma0 == pytest.approx(15.0 + math.sqrt(3.0) * 3.0)


def test_bound_curves_table():
    mb = ModelBounds(lam=1.0, t_mix=1.0)
    frame = bound_curves(mb, [1000, 8000], "GATE")
    assert list(frame.columns) == ["T", "l", "b", "component", "value"]
    assert len(frame) == 14
    total = frame[(frame["T"] == 1000) & (frame["component"] == "mse_bound")]["value"].iloc[0]
    assert total == pytest.approx(0.3625, abs=5e-4)
    assert np.isfinite(frame["value"]).all()
