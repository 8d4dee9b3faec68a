import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from revdiff import cli
from revdiff.metrics import wasserstein2
from revdiff.samplers import expected_queries, schedule_theory
from revdiff.scores import EstimatorSpec


def run(tmp_path, *argv, config=None):
    if config is not None:
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(config))
        argv = argv + ("--config", str(path))
    return cli.main(list(argv))


SMALL = {
    "target": {"preset": "standard-gaussian", "dim": 2},
    "num_chains": 64,
    "seed": 3,
    "ours": {"schedule": {"T": 2.0, "N": 10, "n": 20}},
}


def test_presets_listed(capsys):
    assert cli.main(["presets"]) == 0
    names = capsys.readouterr().out.split()
    for name in ("fig1-sweep", "fig3-ours", "fig3-ula", "fig3-rdmc", "std-gaussian", "theory", "appB2"):
        assert name in names


def test_sample_byte_identical(tmp_path):
    for k in ("a", "b"):
        assert run(tmp_path, "sample", "--output", str(tmp_path / k), config=SMALL) == 0
    assert (tmp_path / "a" / "samples.csv").read_bytes() == (tmp_path / "b" / "samples.csv").read_bytes()


def test_seed_override_changes_output(tmp_path):
    run(tmp_path, "sample", "--output", str(tmp_path / "a"), config=SMALL)
    run(tmp_path, "sample", "--output", str(tmp_path / "b"), "--seed", "4", config=SMALL)
    assert (tmp_path / "a" / "samples.csv").read_bytes() != (tmp_path / "b" / "samples.csv").read_bytes()


def test_meta_and_resolved_config(tmp_path):
    out = tmp_path / "a"
    run(tmp_path, "sample", "--output", str(out), config=SMALL)
    meta = json.loads((out / "meta.json").read_text())
    assert meta["status"] == "ok"
    assert meta["queries_per_chain"] == 10 * 20
    assert meta["potential_queries"] == 64 * 10 * 20
    assert meta["config"]["target"]["weights"] == [1.0]
    # the resolved config alone reproduces the run
    again = tmp_path / "b"
    run(tmp_path, "sample", "--output", str(again), config=meta["config"])
    assert (out / "samples.csv").read_bytes() == (again / "samples.csv").read_bytes()


def test_theory_preset_queries(tmp_path):
    out = tmp_path / "t"
    assert run(tmp_path, "sample", "--preset", "theory", "--output", str(out), config={"num_chains": 20}) == 0
    meta = json.loads((out / "meta.json").read_text())
    closed = expected_queries(schedule_theory(0.5, 1), EstimatorSpec("self_normalized_dsi"), 20)
    assert meta["queries_per_chain"] == 64
    assert (meta["potential_queries"], meta["gradient_queries"]) == closed == (64 * 20, 0)


def test_samples_round_trip(tmp_path):
    out = tmp_path / "a"
    run(tmp_path, "sample", "--output", str(out), config=SMALL)
    X = cli.read_samples(out / "samples.csv")
    assert X.shape == (64, 2)
    with open(out / "samples.csv") as fh:
        assert next(csv.reader(fh)) == ["x0", "x1"]
    cli.write_samples(tmp_path / "copy.csv", X)
    np.testing.assert_array_equal(cli.read_samples(tmp_path / "copy.csv"), X)
    assert wasserstein2(X, cli.read_samples(tmp_path / "copy.csv")).distance == 0.0


@pytest.mark.parametrize("bad", [
    {"target": {"weights": [0.5, 0.6], "means": [[0], [1]], "covariances": [1, 1]}},
    {"ula": {"step_size": 0.1, "steps": 5}},
    {"ours": {"schedule": {"T": 1.0, "N": 5, "n": 5}, "bogus": 1}},
    {"ours": {"schedule": {"T": -1.0, "N": 5, "n": 5}}},
])
def test_config_errors(tmp_path, capsys, bad):
    cfg = cli._merge(SMALL, bad)
    assert run(tmp_path, "sample", "--output", str(tmp_path / "x"), config=cfg) == cli.EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_unknown_field_path(tmp_path, capsys):
    cfg = cli._merge(SMALL, {"ours": {"schedule": {"T": 1.0, "N": 5, "n": 5, "h": 2}}})
    assert run(tmp_path, "sample", config=cfg) == cli.EXIT_CONFIG
    assert "config.ours.schedule" in capsys.readouterr().err


def test_unknown_preset(tmp_path):
    assert cli.main(["sample", "--preset", "nope"]) == cli.EXIT_CONFIG


def test_budget_exceeded(tmp_path):
    out = tmp_path / "b"
    cfg = dict(SMALL, query_budget=199)
    assert run(tmp_path, "sample", "--output", str(out), config=cfg) == cli.EXIT_BUDGET
    assert json.loads((out / "meta.json").read_text())["status"] == "budget_exceeded"
    assert not (out / "samples.csv").exists()
    cfg["query_budget"] = 200
    assert run(tmp_path, "sample", "--output", str(out), config=cfg) == 0


def test_check_appb2(tmp_path):
    assert run(tmp_path, "check", "--preset", "appB2", "--output", str(tmp_path), config={"n_samples": 10_000}) == 0
    report = json.loads((tmp_path / "check.json").read_text())
    assert report["passed"] and len(report["checks"]) == 3


def test_check_corrupted_target(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"weights": [1.0], "means": [[0.0, 0.0]], "covariances": [[[1.0, 2.0], [2.0, 1.0]]]}')
    assert run(tmp_path, "check", config={"target": str(bad)}) != 0
    bad.write_text("{not json")
    assert run(tmp_path, "check", config={"target": str(bad)}) != 0


def test_check_failure_exit(tmp_path, monkeypatch):
    from revdiff.theory import CheckReport

    monkeypatch.setattr(cli, "run_checks", lambda *a: [CheckReport("fake", 1, 1.0, 0.0, [], {})])
    assert run(tmp_path, "check", "--preset", "appB2") == cli.EXIT_CHECK


def test_score_mse_rows(tmp_path):
    cfg = {
        "target": {"weights": [0.5, 0.5], "means": [[-2.0], [2.0]], "covariances": [1.0, 0.5]},
        "particles": [10, 100],
        "estimators": ["exact_oracle", "self_normalized_dsi"],
        "replications": 5,
        "eval_points": 4,
    }
    assert run(tmp_path, "score-mse", "--output", str(tmp_path), config=cfg) == 0
    with open(tmp_path / "mse.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["estimator"] for r in rows] == ["exact_oracle"] * 2 + ["self_normalized_dsi"] * 2
    assert all(float(r["mse"]) == 0.0 for r in rows[:2])
    assert float(rows[2]["mse"]) > float(rows[3]["mse"]) > 0


def test_sweep_degenerate_ring(tmp_path):
    cfg = {
        "radii": [0],
        "seeds": [0],
        "n_samples": 300,
        "methods": {"ours": {"schedule": {"T": 3.0, "N": 20, "n": 200}}},
    }
    assert run(tmp_path, "sweep-w2", "--output", str(tmp_path), config=cfg) == 0
    with open(tmp_path / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["method"] == "ours"
    assert float(rows[0]["w2"]) < 0.5
    assert int(rows[0]["queries"]) == 20 * 200


def test_sweep_budget(tmp_path):
    cfg = {"radii": [2], "seeds": [0], "n_samples": 10, "query_budget": 100,
           "methods": {"ula": {"step_size": 0.01, "steps": 101}}}
    assert run(tmp_path, "sweep-w2", "--output", str(tmp_path), config=cfg) == cli.EXIT_BUDGET


def test_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "revdiff.cli", "presets"], capture_output=True, text=True)
    assert res.returncode == 0 and "theory" in res.stdout
