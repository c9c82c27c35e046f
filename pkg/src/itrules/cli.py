"""Command-line frontend: simulate, fit, derive, distill, evaluate, reproduce.

All commands are batch-style and deterministic: every random choice flows
from ``--seed`` through documented derivations, configuration precedence is
flags > config file > defaults, and outputs land under a run directory with
a manifest at its root.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bart import BartConfig
from .data import (AdditiveLoss, Dataset, LossTable, load_dataset,
                   save_dataset)
from .exceptions import ItrulesError, ParameterError
from .flex import FittedFlexModel, fit_flex
from .logistic import SGDConfig, fit_direct_logistic, fit_soft_logistic, main_effects_basis
from .metrics import (classification_metrics, eval_against_draws,
                      score_rule, true_optimal_rule)
from .rules import direct_rule, optimal_rule
from .seeding import child_seed
from .simulate import (DEFAULT_CONFOUNDING, SCENARIO_IDS, SimPopulation,
                       draw_sample, generate_population)
from .study import (DESK_THRESHOLDS, ExperimentConfig, default_jobs,
                    population_for, run_replications, write_plot_data_csv,
                    write_replicates_csv, write_report_csv)
from .trees import (TreeConfig, distill_tree, fit_direct_tree, tree_to_dot,
                    tree_to_json, tree_to_text)

GROUND_TRUTH_COLUMNS = ("true_p1", "true_p0", "true_tau", "propensity")


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def _config_from_obj(obj: dict) -> ExperimentConfig:
    kwargs = dict(obj)
    if "bart" in kwargs:
        kwargs["bart"] = BartConfig(**kwargs["bart"])
    if "tree" in kwargs:
        kwargs["tree"] = TreeConfig(**kwargs["tree"])
    if "sgd" in kwargs:
        kwargs["sgd"] = SGDConfig(**kwargs["sgd"])
    for key in ("thresholds", "families"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return _config_from_obj(json.load(fh))


def config_to_obj(config: ExperimentConfig) -> dict:
    return dataclasses.asdict(config)


def _parse_thresholds(text: str) -> tuple[int, ...]:
    out = []
    for part in text.split(","):
        part = part.strip().rstrip("%")
        if part:
            out.append(int(part))
    if not out:
        raise ParameterError("no thresholds given")
    return tuple(out)


# ---------------------------------------------------------------------------
# shared I/O helpers
# ---------------------------------------------------------------------------


def _write_ground_truth(pop: SimPopulation, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GROUND_TRUTH_COLUMNS)
        for i in range(pop.n):
            w.writerow([repr(float(pop.true_p1[i])), repr(float(pop.true_p0[i])),
                        repr(float(pop.true_tau[i])),
                        repr(float(pop.propensity[i]))])


def _read_ground_truth(path, dataset: Dataset) -> SimPopulation:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = {name: [] for name in GROUND_TRUTH_COLUMNS}
        for row in reader:
            for name in GROUND_TRUTH_COLUMNS:
                cols[name].append(float(row[name]))
    return SimPopulation(dataset, *(np.array(cols[c]) for c in GROUND_TRUTH_COLUMNS))


def _write_rules_csv(path, blocks) -> None:
    """blocks: iterable of (rule, threshold, assignments, p_treat, tau_mean)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rule", "threshold", "row", "assignment", "p_treat",
                    "tau_mean"])
        for rule, thr, assignments, p_treat, tau_mean in blocks:
            for i, a in enumerate(assignments):
                w.writerow([
                    rule, thr, i, int(a),
                    "" if p_treat is None else repr(float(p_treat[i])),
                    "" if tau_mean is None else repr(float(tau_mean[i])),
                ])


def _read_rules_csv(path) -> dict[tuple[str, int], np.ndarray]:
    table: dict[tuple[str, int], list[tuple[int, int]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["rule"], int(row["threshold"]))
            table.setdefault(key, []).append((int(row["row"]), int(row["assignment"])))
    out = {}
    for key, pairs in table.items():
        pairs.sort()
        out[key] = np.array([a for _, a in pairs], dtype=np.int8)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pop = generate_population(args.scenario, args.population_size, args.seed,
                              args.confounding)
    target = pop
    if args.sample_size is not None:
        target = draw_sample(pop, args.sample_size, child_seed(args.seed, "sample"))
    save_dataset(target.dataset, out / "dataset.csv", out / "dataset.schema.json")
    _write_ground_truth(target, out / "ground_truth.csv")
    print(f"wrote {target.n} rows to {out / 'dataset.csv'}")
    return 0


def _bart_config(args) -> BartConfig:
    if args.config:
        with open(args.config) as fh:
            return BartConfig(**json.load(fh))
    if args.desk:
        return BartConfig.desk()
    return BartConfig.defaults()


def cmd_fit_flex(args) -> int:
    dataset = load_dataset(args.data, args.schema)
    config = _bart_config(args)
    model = fit_flex(dataset, config, seed=args.seed,
                     augment_with_propensity=args.augment_propensity)
    model.save(args.out)
    print(f"fit {config.num_trees} trees x {config.retained} retained draws; "
          f"saved to {args.out}")
    return 0


def _loss_specs(args) -> list[tuple[int | str, LossTable, AdditiveLoss | None]]:
    """Resolve the loss flags into labelled loss tables."""
    if args.loss_table:
        with open(args.loss_table) as fh:
            table = LossTable(np.array(json.load(fh)["table"], dtype=np.float64))
        return [("custom", table, None)]
    if args.ct is not None or args.cd is not None:
        if args.ct is None or args.cd is None:
            raise ParameterError("--ct and --cd must be given together")
        loss = AdditiveLoss(args.ct, args.cd)
        return [("custom", loss.expand(), loss)]
    thresholds = _parse_thresholds(args.thresholds)
    out = []
    for t in thresholds:
        loss = AdditiveLoss.from_threshold_percent(t)
        out.append((t, loss.expand(), loss))
    return out


def cmd_derive_rules(args) -> int:
    model = FittedFlexModel.load(args.model)
    dataset = load_dataset(args.data, args.schema)
    draws = model.predict_draws(dataset.X)
    tau_mean = draws.tau_mean()
    blocks = []
    for label, table, _ in _loss_specs(args):
        dist = optimal_rule(draws, table, args.rho)
        blocks.append(("flex", label, dist.assignments, dist.p_treat, tau_mean))
    _write_rules_csv(args.out, blocks)
    print(f"wrote per-individual rules for {len(blocks)} loss setting(s) "
          f"to {args.out}")
    return 0


def _read_soft_labels(path, threshold: int | None) -> tuple[np.ndarray, int | str]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ParameterError(f"{path} contains no rows")
    if "threshold" in rows[0]:
        levels = sorted({r["threshold"] for r in rows})
        if threshold is None:
            if len(levels) > 1:
                raise ParameterError(
                    f"{path} holds thresholds {levels}; pick one with --threshold"
                )
            picked = levels[0]
        else:
            picked = str(threshold)
            if picked not in levels:
                raise ParameterError(f"threshold {picked} not present in {path}")
        rows = [r for r in rows if r["threshold"] == picked]
    else:
        picked = "labels"
    if "row" in rows[0]:
        rows.sort(key=lambda r: int(r["row"]))
    return np.array([float(r["p_treat"]) for r in rows]), picked


def cmd_distill(args) -> int:
    dataset = load_dataset(args.data, args.schema)
    labels, label = _read_soft_labels(args.soft_labels, args.threshold)
    if labels.shape[0] != dataset.n:
        raise ParameterError(
            f"soft labels cover {labels.shape[0]} rows, dataset has {dataset.n}"
        )
    config = TreeConfig(args.d_max, args.n_obs)
    distilled = distill_tree(dataset.columns, dataset.X, labels, config)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.json").write_text(tree_to_json(distilled.tree))
    Path(f"{prefix}.txt").write_text(tree_to_text(distilled.tree))
    Path(f"{prefix}.dot").write_text(tree_to_dot(distilled.tree))
    decisions = distilled.decide(dataset.X)
    _write_rules_csv(f"{prefix}.rules.csv",
                     [("tree_distilled", label, decisions,
                       distilled.weights(dataset.X), None)])
    print(tree_to_text(distilled.tree), end="")
    return 0


def cmd_evaluate(args) -> int:
    dataset = load_dataset(args.data, args.schema)
    rules: dict[tuple[str, int | str], np.ndarray] = {}
    for path in args.rules:
        rules.update(_read_rules_csv(path))
    if args.include_observed:
        thresholds = sorted({thr for _, thr in rules}) or [0]
        for thr in thresholds:
            rules[("observed", thr)] = dataset.T.astype(np.int8)
    if not rules:
        raise ParameterError("no rules to evaluate")

    truth = model = None
    if args.ground_truth:
        truth = _read_ground_truth(args.ground_truth, dataset)
    elif args.model:
        model = FittedFlexModel.load(args.model)
    else:
        raise ParameterError("need --ground-truth or --model to evaluate against")

    draws = model.predict_draws(dataset.X) if model is not None else None
    out_rows = []
    for (rule, thr) in sorted(rules, key=lambda k: (str(k[1]), k[0])):
        assignments = rules[(rule, thr)]
        if assignments.shape[0] != dataset.n:
            raise ParameterError(f"rule {rule!r} covers {assignments.shape[0]} "
                                 f"rows, dataset has {dataset.n}")
        loss = AdditiveLoss.from_threshold_percent(float(thr)) \
            if isinstance(thr, int) or str(thr).isdigit() else AdditiveLoss(0.0, 1.0)
        if truth is not None:
            score = score_rule(assignments, truth, loss)
            metrics = score.as_dict()
        else:
            R, V = eval_against_draws(assignments, draws, loss)
            metrics = {"R": R, "V": V}
        for metric, value in metrics.items():
            out_rows.append([thr, rule, metric,
                             "" if value is None else repr(float(value))])
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "rule", "metric", "value"])
        w.writerows(out_rows)
    print(f"wrote {len(out_rows)} metric rows to {args.out}")
    return 0


def cmd_reproduce_sim(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenarios = [s.strip().upper() for s in args.scenarios.split(",") if s.strip()]
    for s in scenarios:
        if s not in SCENARIO_IDS:
            raise ParameterError(f"unknown scenario {s!r}")
    if args.full:
        scenarios = list(SCENARIO_IDS)
        base = ExperimentConfig(replications=100, seed=args.seed)
    elif args.desk:
        base = ExperimentConfig.desk(seed=args.seed)
    else:
        base = ExperimentConfig(seed=args.seed)
    overrides = {}
    if args.replicates is not None:
        overrides["replications"] = args.replicates
    if args.thresholds is not None:
        overrides["thresholds"] = _parse_thresholds(args.thresholds)
    if args.families is not None:
        overrides["families"] = tuple(f.strip() for f in args.families.split(","))
    if args.n is not None:
        overrides["n"] = args.n
    if args.population_size is not None:
        overrides["population_size"] = args.population_size

    reports = []
    configs = []
    for scenario in scenarios:
        config = dataclasses.replace(base, scenario=scenario, **overrides)
        configs.append(config)
        report = run_replications(config, jobs=args.jobs)
        reports.append(report)
        failed = len(report.failures)
        print(f"scenario {scenario}: {report.replications - failed} replicates "
              f"ok, {failed} failed")
        for index, err in report.failures:
            print(f"  replicate {index}: {err}", file=sys.stderr)
    write_report_csv(reports, out / "report.csv")
    write_plot_data_csv(reports, out / "plot_data.csv")
    write_replicates_csv(reports, out / "replicates.csv")
    with open(out / "run_config.json", "w") as fh:
        json.dump([config_to_obj(c) for c in configs], fh, indent=2)
    print(f"wrote report to {out / 'report.csv'}")
    return 0


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def run_pipeline(config_path, out_dir) -> dict:
    """Execute the whole flow on one sample: simulate (or load), fit the
    flexible model, derive per-threshold rules, distill trees, evaluate.

    Returns the manifest (also written to ``<out_dir>/manifest.json``); on a
    stage failure the manifest records the failed stage and the error, and
    the exception is re-raised after writing.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = load_config(config_path)
    seeds = {
        "master": config.seed,
        "population": child_seed(config.seed, "population", config.scenario),
        "sample": child_seed(config.seed, "sample"),
        "flex": child_seed(config.seed, "flex"),
    }
    manifest = {
        "version": __version__,
        "config": config_to_obj(config),
        "seeds": seeds,
        "artifacts": {},
        "timings_s": {},
    }

    def finish(stage: str | None = None, error: str | None = None) -> dict:
        if stage is not None:
            manifest["failed_stage"] = stage
            manifest["error"] = error
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2)
        return manifest

    stage = "simulate"
    try:
        t0 = time.perf_counter()
        population = population_for(config)
        sample = draw_sample(population, config.n, seeds["sample"])
        save_dataset(sample.dataset, out / "dataset.csv",
                     out / "dataset.schema.json")
        _write_ground_truth(sample, out / "ground_truth.csv")
        manifest["artifacts"]["dataset"] = str(out / "dataset.csv")
        manifest["timings_s"][stage] = round(time.perf_counter() - t0, 3)

        stage = "fit-flex"
        t0 = time.perf_counter()
        model = fit_flex(sample.dataset, config.bart, seed=seeds["flex"],
                         augment_with_propensity=config.augment_propensity)
        model.save(out / "model.json")
        manifest["artifacts"]["model"] = str(out / "model.json")
        manifest["timings_s"][stage] = round(time.perf_counter() - t0, 3)

        stage = "derive-rules"
        t0 = time.perf_counter()
        draws = model.predict_draws(sample.dataset.X)
        tau_mean = draws.tau_mean()
        blocks = []
        fitted = {}
        for thr in config.thresholds:
            loss = AdditiveLoss.from_threshold_percent(thr)
            dist = optimal_rule(draws, loss.expand(), config.rho)
            fitted[thr] = dist
            blocks.append(("flex", int(thr), dist.assignments, dist.p_treat,
                           tau_mean))
        _write_rules_csv(out / "rules.csv", blocks)
        manifest["artifacts"]["rules"] = str(out / "rules.csv")
        manifest["timings_s"][stage] = round(time.perf_counter() - t0, 3)

        stage = "distill"
        t0 = time.perf_counter()
        trees_dir = out / "trees"
        trees_dir.mkdir(exist_ok=True)
        distilled = {}
        for thr in config.thresholds:
            rule_tree = distill_tree(sample.dataset.columns, sample.dataset.X,
                                     fitted[thr].p_treat, config.tree)
            distilled[thr] = rule_tree
            prefix = trees_dir / f"threshold_{int(thr):03d}"
            Path(f"{prefix}.json").write_text(tree_to_json(rule_tree.tree))
            Path(f"{prefix}.txt").write_text(tree_to_text(rule_tree.tree))
            Path(f"{prefix}.dot").write_text(tree_to_dot(rule_tree.tree))
        manifest["artifacts"]["trees"] = str(trees_dir)
        manifest["timings_s"][stage] = round(time.perf_counter() - t0, 3)

        stage = "evaluate"
        t0 = time.perf_counter()
        rows = []
        for thr in config.thresholds:
            loss = AdditiveLoss.from_threshold_percent(thr)
            rules = {"flex": fitted[thr].assignments,
                     "tree_distilled": distilled[thr].decide(sample.dataset.X),
                     "observed": sample.dataset.T.astype(np.int8)}
            if "tree" in config.families:
                tree_model = fit_direct_tree(sample.dataset, config.tree)
                rules["tree_direct"] = direct_rule(
                    tree_model, sample.dataset.X, loss.expand(), config.rho)
            truth = true_optimal_rule(sample, loss)
            for kind, assignments in rules.items():
                score = score_rule(assignments, sample, loss, truth)
                for metric, value in score.as_dict().items():
                    rows.append([int(thr), kind, metric,
                                 "" if value is None else repr(float(value))])
        with open(out / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "rule", "metric", "value"])
            w.writerows(rows)
        manifest["artifacts"]["report"] = str(out / "report.csv")
        manifest["timings_s"][stage] = round(time.perf_counter() - t0, 3)
    except Exception as e:
        finish(stage, f"{type(e).__name__}: {e}")
        raise
    return finish()


def cmd_run(args) -> int:
    manifest = run_pipeline(args.config, args.out)
    print(f"pipeline complete; {len(manifest['artifacts'])} artifact groups "
          f"under {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itrules",
        description="Estimate loss-optimal individualized treatment rules and "
                    "distill them into interpretable models.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--scenario", required=True, choices=SCENARIO_IDS)
    p.add_argument("--population-size", type=int, default=10000)
    p.add_argument("--sample-size", type=int, default=None,
                   help="draw a sample of this size and write it instead of "
                        "the population")
    p.add_argument("--confounding", type=float, default=DEFAULT_CONFOUNDING)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-flex", help="fit the flexible outcome model")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--config", help="JSON file with sampler settings")
    p.add_argument("--desk", action="store_true",
                   help="lighter sampler profile (50 trees, 600 iterations)")
    p.add_argument("--augment-propensity", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_flex)

    p = sub.add_parser("derive-rules",
                       help="optimal rules from a fitted model and a loss")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--thresholds", default="0,5,10,15",
                   help="comma-separated percent thresholds")
    p.add_argument("--ct", type=float, default=None)
    p.add_argument("--cd", type=float, default=None)
    p.add_argument("--loss-table", help="JSON file with an 8-entry table")
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_derive_rules)

    p = sub.add_parser("distill", help="fit a rule tree to soft labels")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--soft-labels", required=True,
                   help="CSV with a p_treat column (e.g. derive-rules output)")
    p.add_argument("--threshold", type=int, default=None,
                   help="pick one threshold block from the soft-label CSV")
    p.add_argument("--d-max", type=int, default=2)
    p.add_argument("--n-obs", type=int, default=5)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("evaluate", help="score rules against truth or draws")
    p.add_argument("--rules", action="append", required=True,
                   help="rules CSV (repeatable)")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--ground-truth", default=None)
    p.add_argument("--model", default=None,
                   help="flex-model artifact for draw-based scoring")
    p.add_argument("--include-observed", action="store_true",
                   help="also score the observed-treatment rule")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce-sim", help="run the replication study")
    p.add_argument("--scenarios", default="E,A,F")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--thresholds", default=None)
    p.add_argument("--families", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--population-size", type=int, default=None)
    p.add_argument("--desk", action="store_true",
                   help="20 replicates, light sampler, 10-point threshold grid")
    p.add_argument("--full", action="store_true",
                   help="all 8 scenarios, 100 replicates, 5-point grid")
    p.add_argument("--jobs", type=int, default=default_jobs())
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reproduce_sim)

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ItrulesError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
