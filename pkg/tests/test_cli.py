"""CLI subcommands: artifact round-trips, determinism, error handling."""

import csv
import hashlib
import json

import numpy as np
import pytest

from itrules import load_dataset
from itrules.cli import main, run_pipeline

TINY_BART = {"num_trees": 10, "iterations": 120, "burn_in": 40}


def _sha(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _simulate(tmp_path, extra=()):
    out = tmp_path / "sim"
    rc = main(["simulate", "--scenario", "E", "--population-size", "800",
               "--sample-size", "200", "--seed", "3", "--out", str(out),
               *extra])
    assert rc == 0
    return out


def test_simulate_writes_loadable_dataset(tmp_path):
    out = _simulate(tmp_path)
    ds = load_dataset(out / "dataset.csv", out / "dataset.schema.json")
    assert ds.n == 200
    with open(out / "ground_truth.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 200
    assert set(rows[0]) == {"true_p1", "true_p0", "true_tau", "propensity"}


def test_simulate_deterministic(tmp_path):
    a = _simulate(tmp_path / "a")
    b = _simulate(tmp_path / "b")
    for name in ("dataset.csv", "dataset.schema.json", "ground_truth.csv"):
        assert _sha(a / name) == _sha(b / name)


def _fit(tmp_path, sim_dir):
    cfg = tmp_path / "bart.json"
    cfg.write_text(json.dumps(TINY_BART))
    model_path = tmp_path / "model.json"
    rc = main(["fit-flex", "--data", str(sim_dir / "dataset.csv"),
               "--schema", str(sim_dir / "dataset.schema.json"),
               "--config", str(cfg), "--seed", "5", "--out", str(model_path)])
    assert rc == 0
    return model_path


def test_fit_derive_distill_evaluate_flow(tmp_path, capsys):
    sim = _simulate(tmp_path)
    model = _fit(tmp_path, sim)

    rules_path = tmp_path / "rules.csv"
    rc = main(["derive-rules", "--model", str(model),
               "--data", str(sim / "dataset.csv"),
               "--schema", str(sim / "dataset.schema.json"),
               "--thresholds", "0,10", "--out", str(rules_path)])
    assert rc == 0
    with open(rules_path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 400  # 200 rows x 2 thresholds
    p_treats = np.array([float(r["p_treat"]) for r in rows])
    assert np.all((p_treats >= 0) & (p_treats <= 1))
    by_thr = {r["threshold"] for r in rows}
    assert by_thr == {"0", "10"}
    # fewer individuals treated at the higher threshold
    treated = {t: sum(int(r["assignment"]) for r in rows if r["threshold"] == t)
               for t in by_thr}
    assert treated["10"] <= treated["0"]

    prefix = tmp_path / "tree"
    rc = main(["distill", "--data", str(sim / "dataset.csv"),
               "--schema", str(sim / "dataset.schema.json"),
               "--soft-labels", str(rules_path), "--threshold", "10",
               "--out-prefix", str(prefix)])
    assert rc == 0
    text = (tmp_path / "tree.txt").read_text()
    assert "decision=" in text
    assert (tmp_path / "tree.dot").read_text().startswith("digraph")
    assert json.loads((tmp_path / "tree.json").read_text())["format"] == \
        "itrules-rule-tree"

    report = tmp_path / "eval.csv"
    rc = main(["evaluate", "--rules", str(rules_path),
               "--rules", str(tmp_path / "tree.rules.csv"),
               "--data", str(sim / "dataset.csv"),
               "--schema", str(sim / "dataset.schema.json"),
               "--ground-truth", str(sim / "ground_truth.csv"),
               "--include-observed", "--out", str(report)])
    assert rc == 0
    with open(report) as fh:
        metrics = list(csv.DictReader(fh))
    kinds = {r["rule"] for r in metrics}
    assert {"flex", "tree_distilled", "observed"} <= kinds


def test_evaluate_against_model_draws(tmp_path):
    sim = _simulate(tmp_path)
    model = _fit(tmp_path, sim)
    rules_path = tmp_path / "rules.csv"
    main(["derive-rules", "--model", str(model),
          "--data", str(sim / "dataset.csv"),
          "--schema", str(sim / "dataset.schema.json"),
          "--thresholds", "5", "--out", str(rules_path)])
    report = tmp_path / "eval.csv"
    rc = main(["evaluate", "--rules", str(rules_path),
               "--data", str(sim / "dataset.csv"),
               "--schema", str(sim / "dataset.schema.json"),
               "--model", str(model), "--include-observed",
               "--out", str(report)])
    assert rc == 0
    with open(report) as fh:
        rows = list(csv.DictReader(fh))
    got = {(r["rule"], r["metric"]) for r in rows}
    assert ("flex", "R") in got and ("observed", "V") in got


def test_reproduce_sim_byte_identical(tmp_path):
    args = ["reproduce-sim", "--scenarios", "E", "--replicates", "2",
            "--desk", "--n", "150", "--population-size", "900",
            "--thresholds", "0,20", "--seed", "11", "--jobs", "2"]
    rc = main(args + ["--out", str(tmp_path / "r1")])
    assert rc == 0
    rc = main(args + ["--out", str(tmp_path / "r2")])
    assert rc == 0
    for name in ("report.csv", "plot_data.csv", "replicates.csv"):
        assert _sha(tmp_path / "r1" / name) == _sha(tmp_path / "r2" / name), name
    with open(tmp_path / "r1" / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["scenario"] for r in rows} == {"E"}
    assert {r["threshold"] for r in rows} == {"0", "20"}


def test_reproduce_sim_rejects_unknown_scenario(tmp_path):
    rc = main(["reproduce-sim", "--scenarios", "Q", "--out", str(tmp_path)])
    assert rc != 0


def test_pipeline_manifest_and_rerun(tmp_path):
    config = {
        "scenario": "E", "n": 150, "population_size": 900,
        "replications": 1, "thresholds": [0, 10],
        "bart": TINY_BART, "sgd": {"iterations": 100},
        "families": ["tree"], "seed": 19,
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))

    manifest = run_pipeline(cfg_path, tmp_path / "run1")
    assert "failed_stage" not in manifest
    assert set(manifest["artifacts"]) == {"dataset", "model", "rules", "trees",
                                          "report"}
    assert set(manifest["timings_s"]) == {"simulate", "fit-flex", "derive-rules",
                                          "distill", "evaluate"}

    run_pipeline(cfg_path, tmp_path / "run2")
    for rel in ("dataset.csv", "model.json", "rules.csv", "report.csv",
                "trees/threshold_000.json", "trees/threshold_010.txt"):
        assert _sha(tmp_path / "run1" / rel) == _sha(tmp_path / "run2" / rel), rel


def test_pipeline_validates_config_before_work(tmp_path):
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps({"scenario": "E", "thresholds": [0, 150]}))
    with pytest.raises(Exception):
        run_pipeline(cfg_path, tmp_path / "run")
    assert not (tmp_path / "run" / "dataset.csv").exists()


def test_pipeline_records_failed_stage(tmp_path):
    config = {
        "scenario": "E", "n": 5, "population_size": 900, "replications": 1,
        "thresholds": [0], "bart": TINY_BART, "seed": 1,
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    with pytest.raises(Exception):
        run_pipeline(cfg_path, tmp_path / "run")
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["failed_stage"] == "fit-flex"  # n=5 is below the minimum
    assert "insufficient" in manifest["error"]


def test_cli_reports_ingestion_errors(tmp_path):
    (tmp_path / "bad.csv").write_text("x,T,Y\n3,1,0\n")
    (tmp_path / "bad.schema.json").write_text(json.dumps({"columns": [
        {"name": "x", "role": "covariate", "kind": "binary"},
        {"name": "T", "role": "treatment"},
        {"name": "Y", "role": "outcome"}]}))
    rc = main(["fit-flex", "--data", str(tmp_path / "bad.csv"),
               "--schema", str(tmp_path / "bad.schema.json"),
               "--out", str(tmp_path / "m.json")])
    assert rc == 2
