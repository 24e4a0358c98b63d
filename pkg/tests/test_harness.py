import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from app.bounds import ModelBounds, model_bounds_from_spec
from app.design import SwitchbackDesign
from app.errors import InvalidInputError
from app.estimator import dm_estimate
from app.harness import (
    CHUNK_SIZE,
    PLOT_COLUMNS,
    ExperimentConfig,
    GridCell,
    ReplicateSet,
    bootstrap_variance_se,
    bound_dominance,
    emit_plot_data,
    envelope,
    envelope_fits,
    load_experiment_config,
    replicate_seed,
    run_cell,
    run_grid,
    run_replicate,
    simulate_replicates,
    summarize_cell,
    validate_cells,
)
from app.mdp import FiniteMdpSpec
from app.settings import DATA_DIR
from app.spec_io import spec_to_document


def _shift_spec(effect=2.0, noise_sd=1.0):
    """iid states, so treatment shifts the mean by `effect` with no carryover."""
    row = [0.5, 0.5]
    return FiniteMdpSpec(
        state_count=2,
        kernel0=[row, row],
        kernel1=[row, row],
        outcome_mean=[[0.0, effect], [1.0, 1.0 + effect]],
        noise_sd=noise_sd,
        initial_dist=row,
    )


def _carryover_spec():
    return FiniteMdpSpec(
        state_count=2,
        kernel0=[[0.9, 0.1], [0.3, 0.7]],
        kernel1=[[0.6, 0.4], [0.1, 0.9]],
        outcome_mean=[[0.0, 0.5], [2.0, 3.0]],
        noise_sd=1.0,
        initial_dist=[0.5, 0.5],
    )


def _config(**kwargs):
    data = {
        "spec": spec_to_document(_carryover_spec()),
        "target": "GATE",
        "horizons": [40, 80],
        "block_lengths": [4, 8],
        "burn_ins": [0, 2],
        "reps": 20,
        "master_seed": 3,
    }
    data.update(kwargs)
    return ExperimentConfig.model_validate(data)


def _cell_result(horizon, block_length, estimates, truth=0.0, target="GATE"):
    design = SwitchbackDesign(horizon, block_length)
    values = np.asarray(estimates, dtype=float)
    return summarize_cell(
        target, design, truth, ReplicateSet(values, np.zeros(values.size, dtype=bool))
    )


# --- Config ---

def test_config_cells_product_order():
    cells = _config().cells()
    assert [c.to_dict() for c in cells[:4]] == [
        {"T": 40, "l": 4, "b": 0},
        {"T": 40, "l": 4, "b": 2},
        {"T": 40, "l": 8, "b": 0},
        {"T": 40, "l": 8, "b": 2},
    ]
    assert len(cells) == 8


def test_config_gap_pairing():
    cells = _config(pairing="gap", gap=3, block_lengths=[], burn_ins=[1, 5]).cells()
    assert [(c.block_length, c.burn_in) for c in cells[:2]] == [(4, 1), (8, 5)]


def test_config_validation():
    with pytest.raises(ValidationError):
        _config(pairing="gap")
    with pytest.raises(ValidationError):
        _config(reps=0)
    with pytest.raises(ValidationError):
        _config(unknown_field=1)


def test_load_experiment_config(tmp_path: Path):
    (tmp_path / "spec.json").write_text(json.dumps(spec_to_document(_shift_spec())), encoding="utf-8")
    path = tmp_path / "exp.json"
    path.write_text(
        json.dumps({"spec_path": "spec.json", "horizons": [40], "block_lengths": [4], "reps": 5}),
        encoding="utf-8",
    )
    config = load_experiment_config(path, reps=12, master_seed=None)
    assert config.reps == 12
    assert config.master_seed == 0
    assert Path(config.spec_path) == tmp_path / "spec.json"
    assert config.build_spec().state_count == 2


def test_load_experiment_config_lists_errors(tmp_path: Path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"horizons": [], "reps": 0}), encoding="utf-8")
    with pytest.raises(InvalidInputError) as exc:
        load_experiment_config(path)
    assert len(exc.value.details["errors"]) >= 2


def test_shipped_rate_configs():
    gate_config = load_experiment_config(DATA_DIR / "experiment_gate.json")
    cells = validate_cells(gate_config)
    assert all(c.horizon // c.block_length >= 10 for c in cells)
    assert all(c.horizon % c.block_length == 0 for c in cells)
    longest = {T: max(c.block_length for c in cells if c.horizon == T) for T in gate_config.horizons}
    assert longest[400] == 40
    assert longest[25600] == 1280
    assert list(longest.values()) == sorted(longest.values())

    gap50 = load_experiment_config(DATA_DIR / "experiment_fate_gap50.json")
    assert gap50.target == "FATE"
    assert {c.block_length - c.burn_in for c in validate_cells(gap50)} == {50}
    assert gap50.build_spec().state_count == 33


def test_validate_cells_reports_every_bad_cell():
    config = _config(horizons=[30, 40], block_lengths=[4], burn_ins=[0])
    with pytest.raises(InvalidInputError) as exc:
        validate_cells(config)
    problems = exc.value.details["cells"]
    assert [(p["T"], p["l"]) for p in problems] == [(30, 4)]
    assert "multiple" in problems[0]["reason"]


# --- Replicates ---

def test_replicate_seeds_are_distinct_and_stable():
    cell = GridCell(40, 4, 0)
    seeds = {replicate_seed(1, cell, "GATE", r) for r in range(100)}
    assert len(seeds) == 100
    assert replicate_seed(1, cell, "GATE", 0) == replicate_seed(1, GridCell(40, 4, 0), "GATE", 0)
    assert replicate_seed(1, cell, "GATE", 0) != replicate_seed(1, cell, "FATE", 0)


def test_batched_replicates_match_single_pipeline():
    spec = _carryover_spec()
    design = SwitchbackDesign(48, 6, 2)
    seeds = [replicate_seed(0, GridCell(48, 6, 2), "GATE", r) for r in range(10)]
    batch = simulate_replicates(spec, design, seeds)
    for r, seed in enumerate(seeds):
        plan, trajectory = run_replicate(spec, design, seed)
        assert batch.estimates[r] == dm_estimate(trajectory, plan, design).tau_hat


def test_results_do_not_depend_on_parallelism():
    spec = _carryover_spec()
    design = SwitchbackDesign(60, 6, 1)
    seeds = list(range(2 * CHUNK_SIZE + 5))
    serial = simulate_replicates(spec, design, seeds)
    with ThreadPoolExecutor(max_workers=3) as pool:
        threaded = simulate_replicates(spec, design, seeds, executor=pool)
    pooled = simulate_replicates(spec, design, seeds, workers=2)
    np.testing.assert_array_equal(serial.estimates, threaded.estimates)
    np.testing.assert_array_equal(serial.estimates, pooled.estimates)


def test_residual_sums_are_centered():
    spec = _carryover_spec()
    design = SwitchbackDesign(80, 8, 2)
    result = simulate_replicates(spec, design, list(range(400)), with_residuals=True)
    assert result.residual_sums.shape == (400,)
    se = result.residual_sums.std(ddof=1) / np.sqrt(400)
    assert abs(result.residual_sums.mean()) < 4 * se


# --- Cells ---

def test_summarize_cell_hand_values():
    result = _cell_result(8, 2, [1.0, 3.0], truth=1.0)
    assert result.mean_estimate == 2.0
    assert result.bias == 1.0
    assert result.variance == 2.0
    assert result.mse == 2.0
    assert result.mc_se_of_mse == pytest.approx(2.0)
    assert result.to_dict()["k"] == 4


def test_run_cell_is_unbiased_without_carryover():
    spec = _shift_spec()
    config = ExperimentConfig(
        horizons=[80], block_lengths=[4], reps=200, master_seed=11,
        spec=spec_to_document(spec),
    )
    result = run_cell(config, config.cells()[0], spec=spec)
    assert result.truth == pytest.approx(2.0)
    assert result.degenerate_count == 0
    assert abs(result.bias) < 4 * result.bias_se


def test_fate_cell_runs():
    spec = _carryover_spec()
    config = _config(target="FATE", horizons=[40], block_lengths=[8], burn_ins=[3], reps=5)
    result = run_cell(config, config.cells()[0], spec=spec)
    assert result.target == "FATE"
    assert result.reps == 5


def test_mse_decomposes_into_bias_and_variance():
    config = _config(horizons=[40], block_lengths=[8], burn_ins=[2], reps=50)
    result = run_cell(config, config.cells()[0], spec=_carryover_spec())
    reps = result.reps
    decomposed = result.bias ** 2 + result.variance * (reps - 1) / reps
    assert abs(result.mse - decomposed) < 1e-10


def test_degenerate_frequency_matches_coin_flips():
    spec = _shift_spec()
    config = ExperimentConfig(
        horizons=[6], block_lengths=[2], reps=2000, master_seed=5,
        spec=spec_to_document(spec),
    )
    result = run_cell(config, config.cells()[0], spec=spec)
    expected = 2.0 ** (1 - 3)
    se = (expected * (1 - expected) / result.reps) ** 0.5
    assert abs(result.degenerate_count / result.reps - expected) < 4 * se


def test_run_grid_is_deterministic():
    config = _config()
    first = run_grid(config).to_frame()
    second = run_grid(config).to_frame()
    assert first.equals(second)
    assert len(first) == 8


# --- Envelope and plot data ---

def test_envelope_picks_minimum_per_horizon():
    cells = [
        _cell_result(8, 2, [1.0, -1.0]),
        _cell_result(8, 4, [0.5, -0.5]),
        _cell_result(16, 2, [0.2, -0.2]),
        _cell_result(16, 4, [0.2, -0.2]),
    ]
    best = envelope(cells)
    assert [(c.horizon, c.block_length) for c in best] == [(8, 4), (16, 2)]


def test_min_blocks_drops_short_block_counts():
    config = _config(horizons=[40, 80], block_lengths=[4, 8, 20], burn_ins=[0], min_blocks=5)
    assert [(c.horizon, c.block_length) for c in config.cells()] == [(40, 4), (40, 8), (80, 4), (80, 8)]
    assert len(_config(horizons=[40, 80], block_lengths=[4, 8, 20], burn_ins=[0]).cells()) == 6
    with pytest.raises(ValidationError):
        _config(min_blocks=0)


def test_envelope_respects_min_blocks():
    cells = [
        _cell_result(8, 2, [1.0, -1.0]),
        _cell_result(8, 4, [0.5, -0.5]),
        _cell_result(16, 2, [0.5, -0.5]),
        _cell_result(32, 2, [0.25, -0.25]),
    ]
    assert [(c.horizon, c.block_length) for c in envelope(cells)][0] == (8, 4)
    trimmed = envelope(cells, min_blocks=3)
    assert [(c.horizon, c.block_length) for c in trimmed] == [(8, 2), (16, 2), (32, 2)]
    assert envelope_fits(cells, min_blocks=3)["GATE"]["slope"] == pytest.approx(-2.0)


def test_emit_plot_data():
    cells = [
        _cell_result(8, 2, [1.0, -1.0]),
        _cell_result(16, 2, [0.5, -0.5]),
        _cell_result(32, 2, [0.25, -0.25]),
    ]
    frame = emit_plot_data(cells)
    assert list(frame.columns) == PLOT_COLUMNS
    assert set(frame["series"]) == {"cell", "envelope", "ref_t_minus_2_3", "ref_log_t_over_t"}
    env = frame[frame["series"] == "envelope"]
    assert env["fit_slope"].iloc[0] == pytest.approx(-2.0)
    for series in ("ref_t_minus_2_3", "ref_log_t_over_t"):
        anchor = frame[(frame["series"] == series) & (frame["T"] == 8)]["mse"].iloc[0]
        assert anchor == pytest.approx(1.0)
    assert envelope_fits(cells)["GATE"]["slope"] == pytest.approx(-2.0)
    with pytest.raises(InvalidInputError):
        emit_plot_data([])


# --- Bound dominance ---

def test_bootstrap_variance_se():
    values = np.random.default_rng(0).normal(size=300)
    se = bootstrap_variance_se(values, n_boot=100, seed=1)
    assert se > 0
    assert se == bootstrap_variance_se(values, n_boot=100, seed=1)
    with pytest.raises(InvalidInputError):
        bootstrap_variance_se([1.0])


def test_measured_error_within_bounds():
    spec = _carryover_spec()
    config = _config(horizons=[240], block_lengths=[12], burn_ins=[4], reps=200)
    result = run_cell(config, config.cells()[0], spec=spec)
    check = bound_dominance(result, model_bounds_from_spec(spec, 240), n_boot=100)
    assert check.bias_ok
    assert check.variance_ok


def test_dominance_flags_a_tight_bound():
    result = _cell_result(8, 2, np.linspace(-5, 5, 50) + 3.0)
    check = bound_dominance(result, ModelBounds(lam=1e-6, t_mix=0.0))
    assert not check.bias_ok
    assert not check.variance_ok
