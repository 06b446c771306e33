import json

import numpy as np
import pytest

from henon_extremes.cli import EXIT_CONFIG, EXIT_MISMATCH, main
from henon_extremes.records import RunRecord


def test_orbit_from_origin(tmp_path):
    out = tmp_path / "o.csv"
    assert main(["orbit", "--length", "3", "--burn-in", "0", "--start", "0", "0",
                 "--out", str(out)]) == 0
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    assert rows.shape == (3, 2)
    assert rows[0].tolist() == [1.0, 0.0]
    assert (tmp_path / "o.csv.record.json").exists()


def test_orbit_seed_reproducible(tmp_path):
    for name in ("a.csv", "b.csv"):
        main(["orbit", "--length", "500", "--seed", "4", "--out", str(tmp_path / name)])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len(np.loadtxt(tmp_path / "a.csv", delimiter=",", skiprows=1)) == 500


def test_geometry_preimages(tmp_path):
    out = tmp_path / "p1.csv"
    main(["geometry", "--mode", "preimages", "--depth", "1", "--out", str(out)])
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.all(rows[:, 0] == 1.0)
    out = tmp_path / "p2.csv"
    main(["geometry", "--mode", "preimages", "--depth", "2", "--out", str(out)])
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    d2 = rows[rows[:, 2] == 2]
    # depth-2 parabola: y = theta/b - 1 + a x**2 with x = y_n / b
    assert np.max(np.abs(d2[:, 1] - (0.3 / 0.3 - 1 + 1.4 * d2[:, 0] ** 2))) < 1e-9


def test_geometry_classmap(tmp_path):
    out = tmp_path / "c.csv"
    main(["geometry", "--mode", "classmap", "--horizon", "4", "--points", "5000",
          "--out", str(out)])
    labels = np.loadtxt(out, delimiter=",", skiprows=1)[:, 2]
    assert set(labels) == {0.0, 1.0}


def test_train_missing_config(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    assert "not found" in capsys.readouterr().err


def test_train_bad_config_key(tmp_path):
    (tmp_path / "run.json").write_text(json.dumps({"horizn": 2}))
    assert main(["train", "--config", str(tmp_path / "run.json")]) == EXIT_CONFIG


def test_train_evaluate_verify(tmp_path, capsys):
    cfg = {"horizon": 2, "train_size": 400, "test_size": 1000, "epochs": 5, "seed": 3}
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert main(["train", "--config", str(tmp_path / "run.json"), "--profile", "desk",
                 "--misclassified", "--out", str(out)]) == 0
    acc = json.loads(capsys.readouterr().out)["accuracy"]
    rec = RunRecord.load(out / "run.record.json")
    assert rec.metrics["accuracy"] == acc and rec.config["epochs"] == 5
    assert (out / "misclassified.csv").exists()
    assert main(["evaluate", str(out / "run.ckpt")]) == 0
    assert json.loads(capsys.readouterr().out)["accuracy"] == acc
    assert main(["verify", str(out / "run.record.json")]) == 0
    assert json.loads(capsys.readouterr().out)["match"] is True


def test_verify_detects_mismatch(tmp_path, capsys):
    out = tmp_path / "o.csv"
    main(["orbit", "--length", "50", "--out", str(out)])
    assert main(["verify", str(tmp_path / "o.csv.record.json")]) == 0
    rec = json.loads((tmp_path / "o.csv.record.json").read_text())
    rec["metrics"]["sha256"] = "0" * 64
    (tmp_path / "o.csv.record.json").write_text(json.dumps(rec))
    assert main(["verify", str(tmp_path / "o.csv.record.json")]) == EXIT_MISMATCH


def test_sweep_jobs_independent(tmp_path, capsys):
    spec = {"horizons": [1, 2], "training_sizes": [200], "repeats": 2, "test_size": 400,
            "epochs": 3}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    for jobs, name in ((1, "j1"), (3, "j3")):
        assert main(["sweep", "--spec", str(tmp_path / "s.json"), "--jobs", str(jobs),
                     "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "j1" / "sweep.csv").read_text() == (tmp_path / "j3" / "sweep.csv").read_text()
    summary = json.loads((tmp_path / "j1" / "summary.json").read_text())
    assert summary["topological_entropy"] == 0.465
    assert "crossing_times" in summary and "fits" in summary
    assert main(["verify", str(tmp_path / "j1" / "sweep.record.json")]) == 0


def test_single_cell_sweep_equals_train(tmp_path, capsys):
    spec = {"horizons": [2], "training_sizes": [300], "repeats": 1, "test_size": 600,
            "epochs": 4}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    main(["sweep", "--spec", str(tmp_path / "s.json"), "--out", str(tmp_path / "sw")])
    cell_rec = RunRecord.load(next((tmp_path / "sw" / "cells").glob("*.record.json")))
    (tmp_path / "run.json").write_text(json.dumps(cell_rec.config))
    capsys.readouterr()
    main(["train", "--config", str(tmp_path / "run.json"), "--out", str(tmp_path / "tr")])
    assert json.loads(capsys.readouterr().out)["accuracy"] == cell_rec.metrics["accuracy"]


def test_sweep_bad_spec(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"horizons": []}))
    assert main(["sweep", "--spec", str(tmp_path / "s.json")]) == EXIT_CONFIG


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("HENON_EXTREMES_OUT", str(tmp_path / "env"))
    assert main(["orbit", "--length", "10"]) == 0
    assert (tmp_path / "env" / "orbit.csv").exists()


@pytest.mark.slow
def test_desk_profile_horizon_one(tmp_path, capsys):
    assert main(["train", "--profile", "desk", "--horizon", "1", "--seed", "1",
                 "--out", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["accuracy"] > 0.95
