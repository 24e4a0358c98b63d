import json
from pathlib import Path

import numpy as np
import pytest

from app.design import SwitchbackDesign, assign
from app.errors import InvalidInputError
from app.mdp import FiniteMdpSpec, Regime, simulate_trajectory
from app.spec_io import (
    BenchmarkSpecDocument,
    build_spec,
    load_spec,
    parse_spec_document,
    read_json,
    read_trajectory_csv,
    save_spec,
    validate_spec_document,
    write_plan_csv,
    write_trajectory_csv,
)


def _explicit(**overrides):
    doc = {
        "kind": "explicit",
        "kernel0": [[0.9, 0.1], [0.2, 0.8]],
        "kernel1": [[0.5, 0.5], [0.5, 0.5]],
        "outcome_mean": [[0.0, 1.0], [2.0, 4.0]],
        "noise_sd": 1.5,
        "initial_dist": [1.0, 0.0],
    }
    doc.update(overrides)
    return doc


# --- Spec documents ---

def test_default_spec_is_benchmark():
    spec = load_spec()
    assert spec.state_count == 33
    assert spec.name == "benchmark"


def test_benchmark_document_overrides():
    doc = parse_spec_document({"kind": "benchmark", "benchmark": {"hidden_cap": 4, "noise_sd": 1.0}})
    assert isinstance(doc, BenchmarkSpecDocument)
    spec = build_spec(doc)
    assert spec.state_count == 15
    assert spec.noise_sd == 1.0


def test_explicit_document_builds():
    spec = build_spec(parse_spec_document(_explicit()))
    assert spec.state_count == 2
    assert spec.noise_law == "gaussian"
    assert spec.kernel0[1, 0] == 0.2


def test_schedule_document_builds_piecewise_spec():
    regime = {
        "start": 10,
        "kernel0": [[1.0, 0.0], [0.0, 1.0]],
        "kernel1": [[0.5, 0.5], [0.5, 0.5]],
        "outcome_mean": [[5.0, 6.0], [7.0, 8.0]],
    }
    spec = build_spec(parse_spec_document(_explicit(schedule=[regime])))
    assert spec.change_points.tolist() == [10]
    assert spec.regime_at(10).outcome_mean[0, 0] == 5.0


def test_validation_lists_problems():
    assert validate_spec_document(_explicit()) == []
    assert validate_spec_document([]) == ["Root JSON must be an object."]
    errors = validate_spec_document(_explicit(noise_sd=-1.0, initial_dist="x"))
    assert len(errors) == 2
    problems = validate_spec_document(_explicit(kernel0=[[0.5, 0.4], [0.2, 0.8]]))
    assert len(problems) == 1
    assert "kernel0" in problems[0]


def test_unknown_kind_rejected():
    with pytest.raises(InvalidInputError):
        parse_spec_document({"kind": "mystery"})


def test_save_and_load_round_trip(tmp_path: Path):
    later = Regime(np.eye(2), np.eye(2), np.ones((2, 2)))
    spec = FiniteMdpSpec(
        2, [[0.3, 0.7], [0.6, 0.4]], np.eye(2), [[1.0, 2.0], [3.0, 4.0]], 0.5, [0.25, 0.75],
        noise_law="uniform", schedule=((4, later),), name="two",
    )
    loaded = load_spec(save_spec(spec, tmp_path / "nested" / "spec.json"))
    np.testing.assert_array_equal(loaded.kernel0, spec.kernel0)
    np.testing.assert_array_equal(loaded.initial_dist, spec.initial_dist)
    assert loaded.noise_law == "uniform"
    assert loaded.name == "two"
    assert loaded.change_points.tolist() == [4]


def test_read_json_errors(tmp_path: Path):
    with pytest.raises(InvalidInputError):
        read_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(InvalidInputError):
        read_json(bad)


# --- CSV files ---

def test_trajectory_csv_preserves_values(tmp_path: Path):
    spec = build_spec(parse_spec_document(_explicit()))
    traj = simulate_trajectory(spec, [0, 0, 1, 1, 0, 0], seed=3)
    path = write_trajectory_csv(traj, tmp_path / "traj.csv")
    assert path.read_text(encoding="utf-8").splitlines()[0] == "t,w,s,y"
    loaded = read_trajectory_csv(path)
    np.testing.assert_array_equal(loaded.outcomes, traj.outcomes)
    np.testing.assert_array_equal(loaded.states, traj.states)
    np.testing.assert_array_equal(loaded.treatments, traj.treatments)


def test_trajectory_csv_checks(tmp_path: Path):
    gap = tmp_path / "gap.csv"
    gap.write_text("t,w,s,y\n1,0,0,1.0\n3,0,0,2.0\n", encoding="utf-8")
    with pytest.raises(InvalidInputError):
        read_trajectory_csv(gap)
    short = tmp_path / "short.csv"
    short.write_text("t,w\n1,0\n", encoding="utf-8")
    with pytest.raises(InvalidInputError):
        read_trajectory_csv(short)
    with pytest.raises(InvalidInputError):
        read_trajectory_csv(tmp_path / "absent.csv")


def test_plan_csv(tmp_path: Path):
    plan = assign(SwitchbackDesign(6, 2), seed=2)
    path = write_plan_csv(plan, tmp_path / "plan.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,block,w"
    assert len(lines) == 7


def test_bundled_templates_validate():
    data_dir = Path(__file__).parent.parent / "data"
    assert validate_spec_document(json.loads((data_dir / "benchmark_spec.json").read_text(encoding="utf-8"))) == []
