"""Scoring treatment rules against ground truth or posterior draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import AdditiveLoss, LossTable, as_loss_table
from .exceptions import ParameterError
from .rules import additive_threshold_rule, expected_loss, joint_po
from .simulate import SimPopulation
from .validation import as_binary_vector


@dataclass(frozen=True)
class RuleScore:
    """Average loss R, average outcome V, and (when the true optimal rule is
    known) accuracy/precision/recall.  Metrics with an empty denominator are
    None, never silently zero."""

    R: float
    V: float
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None

    def as_dict(self) -> dict[str, float | None]:
        return {"R": self.R, "V": self.V, "accuracy": self.accuracy,
                "precision": self.precision, "recall": self.recall}


def true_optimal_rule(population: SimPopulation, loss: AdditiveLoss) -> np.ndarray:
    """Ground-truth rule: treat iff the true effect exceeds c_t / c_d."""
    return additive_threshold_rule(population.true_tau, loss.c_t, loss.c_d)


def _per_row_loss(assignments: np.ndarray, p1: np.ndarray, p0: np.ndarray,
                  loss: LossTable) -> np.ndarray:
    joint = joint_po(p1, p0, rho=0.0)
    l1 = expected_loss(joint, loss, 1)
    l0 = expected_loss(joint, loss, 0)
    return np.where(assignments == 1, l1, l0)


def average_loss(assignments, population: SimPopulation,
                 loss: AdditiveLoss | LossTable) -> float:
    """Mean expected loss of the rule under the true outcome probabilities.

    The per-individual joint is built from the true marginals at rho=0;
    under the additive loss the result does not depend on that choice.
    """
    a = as_binary_vector(assignments, "assignments", population.n)
    table = as_loss_table(loss)
    # true probabilities can sit on (0,1) boundaries only for infinite logits
    p1 = np.clip(population.true_p1, 1e-15, 1 - 1e-15)
    p0 = np.clip(population.true_p0, 1e-15, 1 - 1e-15)
    return float(_per_row_loss(a, p1, p0, table).mean())


def average_outcome(assignments, population: SimPopulation) -> float:
    """Mean true outcome probability under each individual's assigned arm."""
    a = as_binary_vector(assignments, "assignments", population.n)
    return float(np.where(a == 1, population.true_p1, population.true_p0).mean())


def classification_metrics(rule, true_rule) -> tuple[float, float | None, float | None]:
    """(accuracy, precision, recall) of a rule against the true optimal rule."""
    d = as_binary_vector(rule, "rule")
    t = as_binary_vector(true_rule, "true_rule", d.shape[0])
    accuracy = float((d == t).mean())
    pred_pos = int((d == 1).sum())
    true_pos = int((t == 1).sum())
    hits = int(((d == 1) & (t == 1)).sum())
    precision = hits / pred_pos if pred_pos > 0 else None
    recall = hits / true_pos if true_pos > 0 else None
    return accuracy, precision, recall


def score_rule(assignments, population: SimPopulation,
               loss: AdditiveLoss, true_rule=None) -> RuleScore:
    """All metrics of one rule on one population sample."""
    R = average_loss(assignments, population, loss)
    V = average_outcome(assignments, population)
    if true_rule is None:
        true_rule = true_optimal_rule(population, loss)
    accuracy, precision, recall = classification_metrics(assignments, true_rule)
    return RuleScore(R, V, accuracy, precision, recall)


def eval_against_draws(assignments, draws, loss: AdditiveLoss | LossTable
                       ) -> tuple[float, float]:
    """(R, V) against the flexible model's posterior instead of ground truth.

    Used when no true data-generating process is available: both metrics are
    computed per posterior draw with the draw's own probabilities, then
    averaged over draws.
    """
    values = draws.values if hasattr(draws, "values") else np.asarray(draws)
    if values.ndim != 3 or values.shape[2] != 2:
        raise ParameterError("draws must have shape (D, n, 2)")
    a = as_binary_vector(assignments, "assignments", values.shape[1])
    table = as_loss_table(loss)
    p1 = values[:, :, 1]
    p0 = values[:, :, 0]
    joint = joint_po(p1, p0, rho=0.0)
    l1 = expected_loss(joint, table, 1)
    l0 = expected_loss(joint, table, 0)
    per_draw_loss = np.where(a == 1, l1, l0)
    per_draw_value = np.where(a == 1, p1, p0)
    return float(per_draw_loss.mean()), float(per_draw_value.mean())
