"""itrules: loss-optimal individualized treatment rules, distilled.

Fit a flexible Bayesian outcome model to (covariates, treatment, outcome)
data, turn its posterior draws plus a loss specification into optimal
per-individual treatment rules, and distill those rules into interpretable
depth-constrained trees or logistic models via soft-label cross-entropy.
"""

from .bart import BartConfig, ProbitForest, split_prior_prob
from .data import (AdditiveLoss, ColumnKind, ColumnSpec, Dataset, LossTable,
                   TreatmentRule, expand_additive, load_dataset, save_dataset)
from .exceptions import (DegenerateCateError, InfeasibleCorrelationError,
                         IngestionError, ItrulesError, ParameterError,
                         SchemaMismatchError)
from .flex import FittedFlexModel, PosteriorDraws, fit_flex, predict_draws
from .logistic import (Basis, LogisticModel, SGDConfig, SGDLogistic,
                       fit_direct_logistic, fit_soft_logistic,
                       interaction_basis, main_effects_basis)
from .metrics import (RuleScore, average_loss, average_outcome,
                      classification_metrics, eval_against_draws, score_rule,
                      true_optimal_rule)
from .rules import (RuleDistribution, additive_threshold_rule, direct_rule,
                    expected_loss, feasible_rho_interval, joint_po,
                    optimal_rule)
from .simulate import (SCENARIO_IDS, ScenarioSpec, SimPopulation,
                       draw_sample, generate_population, propensity,
                       sample_covariates, true_cate, true_logit)
from .study import (ExperimentConfig, ReplicationReport, run_replications,
                    write_plot_data_csv, write_replicates_csv,
                    write_report_csv)
from .trees import (CrossEntropyTree, SoftLabelTree, TreeConfig,
                    best_split, distill_tree, fit_direct_tree, fit_soft_tree,
                    merge_siblings, region_objective, tree_from_json,
                    tree_rule, tree_to_dot, tree_to_json, tree_to_text)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
