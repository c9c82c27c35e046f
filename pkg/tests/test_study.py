"""Replication harness: aggregation, determinism, failure handling."""

import numpy as np
import pytest

import itrules.study as study
from itrules import BartConfig, SGDConfig, TreeConfig
from itrules.exceptions import ParameterError
from itrules.study import (ExperimentConfig, population_for, run_replications,
                           write_plot_data_csv, write_replicates_csv,
                           write_report_csv)

TINY = dict(
    n=150,
    population_size=1500,
    thresholds=(0, 20),
    bart=BartConfig(num_trees=10, iterations=120, burn_in=40),
    sgd=SGDConfig(iterations=100),
    tree=TreeConfig(d_max=2, n_obs=5),
    seed=77,
)


def test_config_validation():
    with pytest.raises(ParameterError):
        ExperimentConfig(scenario="Z")
    with pytest.raises(ParameterError):
        ExperimentConfig(thresholds=(0, 101))
    with pytest.raises(ParameterError):
        ExperimentConfig(replications=0)
    with pytest.raises(ParameterError):
        ExperimentConfig(n=2000, population_size=1000)
    with pytest.raises(ParameterError):
        ExperimentConfig(families=("spline",))


def test_single_replication_has_no_se():
    config = ExperimentConfig(scenario="E", replications=1, **TINY)
    report = run_replications(config, jobs=1)
    assert report.failures == ()
    for _, _, _, mean, se, n_def in report.rows:
        assert se is None
        assert n_def <= 1


def test_doubling_replications_keeps_first_half():
    config2 = ExperimentConfig(scenario="E", replications=2, **TINY)
    config4 = ExperimentConfig(scenario="E", replications=4, **TINY)
    pop = population_for(config2)
    r2 = run_replications(config2, population=pop, jobs=1)
    r4 = run_replications(config4, population=pop, jobs=1)
    first_half = [rec for rec in r4.records if rec[0] < 2]
    assert tuple(first_half) == r2.records


def test_parallel_matches_sequential():
    config = ExperimentConfig(scenario="E", replications=3, **TINY)
    pop = population_for(config)
    seq = run_replications(config, population=pop, jobs=1)
    par = run_replications(config, population=pop, jobs=2)
    assert seq.records == par.records
    assert seq.rows == par.rows


def test_failures_recorded_not_dropped(monkeypatch):
    config = ExperimentConfig(scenario="E", replications=3, **TINY)
    pop = population_for(config)
    real = study.replicate_scores

    def flaky(population, cfg, seed):
        if seed == study.replicate_seed(cfg.seed, 1):
            raise RuntimeError("synthetic failure")
        return real(population, cfg, seed)

    monkeypatch.setattr(study, "replicate_scores", flaky)
    report = run_replications(config, population=pop, jobs=1)
    assert len(report.failures) == 1
    assert report.failures[0][0] == 1
    assert "synthetic failure" in report.failures[0][1]
    indices = {rec[0] for rec in report.records}
    assert indices == {0, 2}
    for _, _, _, _, _, n_def in report.rows:
        assert n_def <= 2


def test_aggregation_matches_records():
    config = ExperimentConfig(scenario="E", replications=3, **TINY)
    report = run_replications(config, jobs=2)
    table = {}
    for index, thr, kind, metric, value in report.records:
        table.setdefault((thr, kind, metric), []).append(value)
    for thr, kind, metric, mean, se, n_def in report.rows:
        vals = [v for v in table[(thr, kind, metric)] if v is not None]
        assert n_def == len(vals)
        if vals:
            assert mean == pytest.approx(np.mean(vals))
        if len(vals) >= 2:
            assert se == pytest.approx(np.std(vals, ddof=1) / np.sqrt(len(vals)))


def test_csv_writers_deterministic(tmp_path):
    config = ExperimentConfig(scenario="E", replications=2, **TINY)
    report = run_replications(config, jobs=1)
    for writer, name in ((write_report_csv, "report.csv"),
                         (write_plot_data_csv, "plot.csv"),
                         (write_replicates_csv, "reps.csv")):
        writer([report], tmp_path / f"a_{name}")
        writer([report], tmp_path / f"b_{name}")
        assert (tmp_path / f"a_{name}").read_bytes() == \
               (tmp_path / f"b_{name}").read_bytes()
    header = (tmp_path / "a_report.csv").read_text().splitlines()[0]
    assert header == "scenario,threshold,rule,metric,mean,se,n_defined"


def test_rule_kinds_follow_families():
    config = ExperimentConfig(scenario="E", families=("tree",), **TINY)
    assert config.rule_kinds() == ("flex", "tree_direct", "tree_distilled")
    both = ExperimentConfig(scenario="E", **TINY)
    assert set(both.rule_kinds()) == {
        "flex", "tree_direct", "tree_distilled",
        "logistic_direct", "logistic_distilled",
    }
