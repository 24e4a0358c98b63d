import json
from pathlib import Path

import pytest

from app.main import main


@pytest.fixture
def outbox(tmp_path: Path, monkeypatch):
    monkeypatch.setenv("SWITCHBACK_OUTPUT_DIR", str(tmp_path / "outbox"))
    monkeypatch.setenv("SWITCHBACK_LOG_LEVEL", "WARNING")
    return tmp_path / "outbox"


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _error(err):
    # log lines may precede the error record
    return json.loads(err.strip().splitlines()[-1])


def test_simulate_then_estimate(outbox, capsys):
    code, out, _ = _run(capsys, "simulate", "-T", "60", "-l", "6", "-b", "2", "--seed", "4",
                        "--plan-out", str(outbox / "plan.csv"))
    assert code == 0
    record = json.loads(out)
    trajectory = Path(record["trajectory"])
    assert trajectory.exists()
    assert (outbox / "plan.csv").exists()

    code, out, _ = _run(capsys, "estimate", "--trajectory", str(trajectory), "-l", "6", "-b", "2")
    assert code == 0
    report = json.loads(out)
    assert report["k1"] + report["k0"] == 10
    assert len(report["block_means"]) == 10

    code, out, _ = _run(capsys, "estimate", "--trajectory", str(trajectory), "-l", "6", "-b", "2", "--csv")
    assert out.splitlines()[0] == "tau_hat,k1,k0,degenerate"


def test_estimate_rejects_mismatched_blocks(outbox, capsys):
    _, out, _ = _run(capsys, "simulate", "-T", "60", "-l", "6", "--seed", "1")
    trajectory = json.loads(out)["trajectory"]
    code, _, err = _run(capsys, "estimate", "--trajectory", trajectory, "-l", "7")
    assert code == 2
    assert _error(err)["error"] == "invalid_input"


def test_invalid_design_exits_with_error_json(outbox, capsys):
    code, out, err = _run(capsys, "simulate", "-T", "10", "-l", "3")
    assert code == 2
    assert out == ""
    record = _error(err)
    assert record["error"] == "invalid_input"
    assert record["details"] == {"T": 10, "l": 3, "b": 0}


def test_oracle(outbox, capsys):
    trace = outbox / "trace.csv"
    code, out, _ = _run(capsys, "oracle", "-T", "100", "-l", "10", "-b", "2", "--trace-out", str(trace))
    assert code == 0
    record = json.loads(out)
    assert record["tau_gate"] > 0
    assert record["filter_size"] == 80
    assert trace.read_text(encoding="utf-8").splitlines()[0] == "t,tau_t"


def test_bounds_and_design_from_flags(outbox, capsys):
    code, out, _ = _run(capsys, "bounds", "--lam", "1", "--t-mix", "1", "-T", "1000", "-l", "15", "--lenient")
    assert code == 0
    assert json.loads(out)["mse_bound"] == pytest.approx(0.3625, abs=5e-4)

    code, out, _ = _run(capsys, "design", "--lam", "1", "--t-mix", "1", "-T", "1000", "--search")
    record = json.loads(out)
    assert record["l"] == 15
    assert record["search"]["mse_bound"] <= 0.3625

    code, out, _ = _run(capsys, "design", "--lam", "1", "--sigma-sq", "9", "--t-mix", "1",
                        "-T", "10000", "--target", "fate")
    record = json.loads(out)
    assert (record["b"], record["l"]) == (5, 8)


def test_bound_curves(outbox, capsys):
    code, out, _ = _run(capsys, "bounds", "--lam", "1", "--t-mix", "1", "-T", "1000", "-l", "10",
                        "--curve", "1000,8000")
    assert code == 0
    assert Path(json.loads(out)["curves"]).exists()


def test_experiment_with_db(outbox, tmp_path: Path, capsys):
    config = tmp_path / "exp.json"
    config.write_text(json.dumps({
        "name": "tiny",
        "horizons": [40, 80, 160],
        "block_lengths": [4, 8],
        "reps": 8,
    }), encoding="utf-8")
    db_path = tmp_path / "runs.db"
    code, out, _ = _run(capsys, "experiment", "--config", str(config), "--db", str(db_path))
    assert code == 0
    record = json.loads(out)
    assert record["cells"] == 6
    assert Path(record["grid"]).exists()
    assert Path(record["plot"]).exists()
    assert len(record["envelope"]) == 3
    assert record["run_id"]
    assert db_path.exists()


def test_mixing(outbox, capsys):
    code, out, _ = _run(capsys, "mixing", "--max-lag", "30")
    assert code == 0
    record = json.loads(out)
    assert record["max_lag"] == 30
    assert len(record["kernels"]) == 2


def test_random_spec(outbox, tmp_path: Path, capsys):
    out_dir = tmp_path / "specs"
    code, out, _ = _run(capsys, "random-spec", "--count", "2", "--states", "3", "--out-dir", str(out_dir))
    assert code == 0
    assert len(json.loads(out)["written"]) == 2
    code, out, _ = _run(capsys, "random-spec", "--clear", "--out-dir", str(out_dir))
    assert json.loads(out)["removed"] == 2


def test_clt_check_rejects_small_runs(outbox, tmp_path: Path, capsys):
    config = tmp_path / "clt.json"
    config.write_text(json.dumps({
        "target": "FATE", "horizons": [200], "block_lengths": [10], "burn_ins": [5], "reps": 10,
    }), encoding="utf-8")
    code, _, err = _run(capsys, "clt-check", "--config", str(config))
    assert code == 2
    assert _error(err)["error"] == "insufficient_replicates"
