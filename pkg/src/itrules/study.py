"""Replication study: fit, distill, and score rules across many samples."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bart import BartConfig
from .data import AdditiveLoss, Dataset
from .exceptions import ParameterError
from .flex import FittedFlexModel, fit_flex
from .logistic import SGDConfig, fit_direct_logistic, fit_soft_logistic, main_effects_basis
from .metrics import RuleScore, score_rule, true_optimal_rule
from .rules import direct_rule, optimal_rule
from .seeding import child_seed, replicate_seed
from .simulate import (DEFAULT_CONFOUNDING, SCENARIO_IDS, SimPopulation,
                       draw_sample, generate_population)
from .trees import TreeConfig, distill_tree, fit_direct_tree

JOBS_ENV_VAR = "ITRULES_JOBS"

FAMILIES = ("tree", "logistic")
METRICS = ("R", "V", "accuracy", "precision", "recall")

DEFAULT_THRESHOLDS = tuple(range(0, 101, 5))
DESK_THRESHOLDS = tuple(range(0, 101, 10))


def default_jobs() -> int:
    env = os.environ.get(JOBS_ENV_VAR)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one scenario's replication study."""

    scenario: str = "E"
    n: int = 1000
    population_size: int = 10000
    replications: int = 100
    thresholds: tuple[int, ...] = DEFAULT_THRESHOLDS
    confounding: float = DEFAULT_CONFOUNDING
    rho: float = 0.0
    bart: BartConfig = field(default_factory=BartConfig)
    tree: TreeConfig = field(default_factory=TreeConfig)
    sgd: SGDConfig = field(default_factory=SGDConfig)
    seed: int = 0
    families: tuple[str, ...] = FAMILIES
    augment_propensity: bool = False
    score_on_population: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIO_IDS:
            raise ParameterError(f"unknown scenario {self.scenario!r}")
        if self.replications < 1:
            raise ParameterError("replications must be >= 1")
        if self.n > self.population_size:
            raise ParameterError("n must not exceed population_size")
        for t in self.thresholds:
            if not 0 <= t <= 100 or int(t) != t:
                raise ParameterError("thresholds must be integers in [0, 100]")
        for fam in self.families:
            if fam not in FAMILIES:
                raise ParameterError(f"unknown simple-model family {fam!r}")

    def rule_kinds(self) -> tuple[str, ...]:
        kinds = ["flex"]
        for fam in self.families:
            kinds += [f"{fam}_direct", f"{fam}_distilled"]
        return tuple(kinds)

    @classmethod
    def desk(cls, scenario: str = "E", **overrides) -> "ExperimentConfig":
        base = cls(scenario=scenario, replications=20,
                   thresholds=DESK_THRESHOLDS, bart=BartConfig.desk())
        return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class ReplicationReport:
    """Per-replicate records plus their aggregation.

    ``records`` maps (replicate, threshold, rule, metric) -> value or None;
    ``rows`` holds (threshold, rule, metric, mean, se, n_defined) where the
    mean/SE are over the replicates with a defined value.
    """

    scenario: str
    replications: int
    thresholds: tuple[int, ...]
    rule_kinds: tuple[str, ...]
    records: tuple[tuple[int, int, str, str, float | None], ...]
    rows: tuple[tuple[int, str, str, float | None, float | None, int], ...]
    failures: tuple[tuple[int, str], ...]


def replicate_scores(population: SimPopulation, config: ExperimentConfig,
                     seed: int) -> dict[tuple[int, str], RuleScore]:
    """Scores of every rule kind at every threshold for one sample draw."""
    sample = draw_sample(population, config.n, child_seed(seed, "sample"))
    flex = fit_flex(sample.dataset, config.bart, seed=child_seed(seed, "flex"),
                    augment_with_propensity=config.augment_propensity)
    score_pop = population if config.score_on_population else sample
    draws = flex.predict_draws(sample.dataset.X)
    if config.score_on_population:
        score_draws = flex.predict_draws(population.dataset.X)
    tree_model = logit_model = None
    if "tree" in config.families:
        tree_model = fit_direct_tree(sample.dataset, config.tree)
    if "logistic" in config.families:
        logit_model = fit_direct_logistic(
            sample.dataset, replace(config.sgd, seed=child_seed(seed, "sgd-direct")))
    basis = main_effects_basis(sample.dataset.columns)

    out: dict[tuple[int, str], RuleScore] = {}
    for thr in config.thresholds:
        loss = AdditiveLoss.from_threshold_percent(thr)
        table = loss.expand()
        fitted = optimal_rule(draws, table, config.rho)
        rules: dict[str, np.ndarray] = {}
        if config.score_on_population:
            rules["flex"] = optimal_rule(score_draws, table, config.rho).assignments
        else:
            rules["flex"] = fitted.assignments
        X_score = score_pop.dataset.X
        if tree_model is not None:
            rules["tree_direct"] = direct_rule(tree_model, X_score, table, config.rho)
            distilled = distill_tree(sample.dataset.columns, sample.dataset.X,
                                     fitted.p_treat, config.tree)
            rules["tree_distilled"] = distilled.decide(X_score)
        if logit_model is not None:
            rules["logistic_direct"] = direct_rule(logit_model, X_score, table,
                                                   config.rho)
            sgd = replace(config.sgd, seed=child_seed(seed, "sgd-distill", int(thr)))
            model = fit_soft_logistic(sample.dataset.X, fitted.p_treat, basis, sgd)
            rules["logistic_distilled"] = model.decide(basis.transform(X_score))
        truth = true_optimal_rule(score_pop, loss)
        for kind, assignments in rules.items():
            out[(int(thr), kind)] = score_rule(assignments, score_pop, loss, truth)
    return out


_WORKER: dict = {}


def _init_worker(population: SimPopulation, config: ExperimentConfig) -> None:
    _WORKER["population"] = population
    _WORKER["config"] = config


def _run_one(task: tuple[int, int]):
    index, seed = task
    try:
        scores = replicate_scores(_WORKER["population"], _WORKER["config"], seed)
        return index, scores, None
    except Exception as e:  # recorded, never silently dropped
        return index, None, f"{type(e).__name__}: {e}"


def population_for(config: ExperimentConfig) -> SimPopulation:
    return generate_population(
        config.scenario, config.population_size,
        child_seed(config.seed, "population", config.scenario),
        config.confounding,
    )


def run_replications(config: ExperimentConfig, population: SimPopulation | None = None,
                     jobs: int | None = None) -> ReplicationReport:
    """Draw samples, fit all rule kinds, and aggregate scores.

    Replicates are independent; each derives its seed as master XOR index,
    so results do not depend on execution order or worker count.  Failed
    replicates are recorded with their error and excluded from aggregation.
    """
    if population is None:
        population = population_for(config)
    if jobs is None:
        jobs = default_jobs()
    tasks = [(i, replicate_seed(config.seed, i)) for i in range(config.replications)]

    results: dict[int, dict] = {}
    failures: list[tuple[int, str]] = []
    if jobs > 1 and config.replications > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(population, config)) as pool:
            for index, scores, err in pool.map(_run_one, tasks):
                if err is None:
                    results[index] = scores
                else:
                    failures.append((index, err))
    else:
        _init_worker(population, config)
        for task in tasks:
            index, scores, err = _run_one(task)
            if err is None:
                results[index] = scores
            else:
                failures.append((index, err))

    rule_kinds = config.rule_kinds()
    records: list[tuple[int, int, str, str, float | None]] = []
    for index in sorted(results):
        scores = results[index]
        for thr in config.thresholds:
            for kind in rule_kinds:
                d = scores[(int(thr), kind)].as_dict()
                for metric in METRICS:
                    records.append((index, int(thr), kind, metric, d[metric]))

    rows = []
    for thr in config.thresholds:
        for kind in rule_kinds:
            for metric in METRICS:
                vals = [v for (_, t, k, m, v) in records
                        if t == thr and k == kind and m == metric and v is not None]
                n_def = len(vals)
                mean = float(np.mean(vals)) if n_def else None
                se = (float(np.std(vals, ddof=1) / math.sqrt(n_def))
                      if n_def >= 2 else None)
                rows.append((int(thr), kind, metric, mean, se, n_def))

    return ReplicationReport(
        scenario=config.scenario,
        replications=config.replications,
        thresholds=tuple(int(t) for t in config.thresholds),
        rule_kinds=rule_kinds,
        records=tuple(records),
        rows=tuple(rows),
        failures=tuple(sorted(failures)),
    )


# ---------------------------------------------------------------------------
# CSV writers (deterministic byte-for-byte given identical reports)
# ---------------------------------------------------------------------------


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def write_report_csv(reports: list[ReplicationReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "threshold", "rule", "metric", "mean", "se",
                    "n_defined"])
        for rep in reports:
            for thr, kind, metric, mean, se, n_def in rep.rows:
                w.writerow([rep.scenario, thr, kind, metric, _fmt(mean),
                            _fmt(se), n_def])


def write_plot_data_csv(reports: list[ReplicationReport], path) -> None:
    """Wide layout: one row per (scenario, metric, threshold), one mean/se
    column pair per rule kind, for direct plotting of the sweep curves."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        kinds = reports[0].rule_kinds if reports else ()
        header = ["scenario", "metric", "threshold"]
        for kind in kinds:
            header += [f"{kind}_mean", f"{kind}_se"]
        w.writerow(header)
        for rep in reports:
            table = {(t, k, m): (mean, se)
                     for t, k, m, mean, se, _ in rep.rows}
            for metric in METRICS:
                for thr in rep.thresholds:
                    row = [rep.scenario, metric, thr]
                    for kind in rep.rule_kinds:
                        mean, se = table[(thr, kind, metric)]
                        row += [_fmt(mean), _fmt(se)]
                    w.writerow(row)


def write_replicates_csv(reports: list[ReplicationReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "replicate", "threshold", "rule", "metric",
                    "value"])
        for rep in reports:
            for index, thr, kind, metric, value in rep.records:
                w.writerow([rep.scenario, index, thr, kind, metric, _fmt(value)])
