"""Logistic rule/outcome models fit by per-row stochastic gradient ascent.

The objective is the soft-label log-likelihood
``mean_i [p_i log r(x_i) + (1 - p_i) log(1 - r(x_i))]``; hard 0/1 labels are
a special case.  One update step uses a single row: the weight moves by
``eta * (p_i - r(x_i)) * phi(x_i)``, i.e. along the ascent direction.  Rows
are shuffled once per epoch from a seeded generator, so fits are
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import expit
from sklearn.base import BaseEstimator

from .data import ColumnSpec, Dataset, model_matrix
from .exceptions import ParameterError, SchemaMismatchError
from .seeding import rng_from
from .validation import as_matrix, as_soft_labels

LOG_EPS = 1e-12


@dataclass(frozen=True)
class SGDConfig:
    learning_rate: float = 0.01
    iterations: int = 1000
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be > 0")
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if self.batch_size != 1:
            raise ParameterError("only batch_size=1 row updates are supported")


@dataclass(frozen=True)
class Basis:
    """Named feature constructors mapping a covariate matrix to a design."""

    names: tuple[str, ...]
    columns: tuple[ColumnSpec, ...]
    with_treatment: bool

    def transform(self, X, T=None) -> np.ndarray:
        if self.with_treatment:
            if T is None:
                raise ParameterError("this basis needs a treatment vector")
            return _interaction_design(self.columns, X, T)[0]
        return _main_effects_design(self.columns, X)[0]


def _dummy_block(columns, X):
    """Main-effect columns: binaries/continuous raw, ordinal/categorical as
    exact-level indicators for levels 2..L."""
    X = np.asarray(X, dtype=np.float64)
    cols, names = [], []
    for j, spec in enumerate(columns):
        k = spec.kind.kind
        if k in ("ordinal", "categorical"):
            for level in range(2, spec.kind.levels + 1):
                cols.append((X[:, j] == level).astype(np.float64))
                names.append(f"{spec.name}={level}")
        else:
            cols.append(X[:, j])
            names.append(spec.name)
    return cols, names


def _main_effects_design(columns, X):
    cols, names = _dummy_block(columns, X)
    n = np.asarray(X).shape[0]
    design = np.column_stack([np.ones(n)] + cols)
    return design, ["intercept"] + names


def _interaction_design(columns, X, T):
    cols, names = _dummy_block(columns, X)
    t = np.asarray(T, dtype=np.float64).ravel()
    n = t.shape[0]
    blocks = [np.ones(n)] + cols + [t] + [c * t for c in cols]
    labels = (["intercept"] + names + ["T"] + [f"{m}*T" for m in names])
    return np.column_stack(blocks), labels


def main_effects_basis(columns: tuple[ColumnSpec, ...]) -> Basis:
    _, names = _main_effects_design(columns, np.zeros((1, len(columns))))
    return Basis(tuple(names), columns, with_treatment=False)


def interaction_basis(columns: tuple[ColumnSpec, ...]) -> Basis:
    _, names = _interaction_design(columns, np.zeros((1, len(columns))), np.zeros(1))
    return Basis(tuple(names), columns, with_treatment=True)


@dataclass(frozen=True)
class LogisticModel:
    """Fitted weights over a named basis; prediction is expit(w . phi(x))."""

    weights: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.shape[0] != len(self.feature_names):
            raise ParameterError("weights must align with feature names")
        object.__setattr__(self, "weights", w)

    def predict_proba(self, design) -> np.ndarray:
        design = as_matrix(design, "design")
        if design.shape[1] != self.weights.shape[0]:
            raise SchemaMismatchError(
                f"design has {design.shape[1]} columns, model has "
                f"{self.weights.shape[0]} weights"
            )
        return expit(design @ self.weights)

    def decide(self, design) -> np.ndarray:
        return (self.predict_proba(design) > 0.5).astype(np.int8)


def soft_loglik(weights, design, labels) -> float:
    """Mean soft-label log-likelihood of the design under the weights."""
    r = np.clip(expit(np.asarray(design) @ np.asarray(weights)),
                LOG_EPS, 1 - LOG_EPS)
    labels = np.asarray(labels, dtype=np.float64)
    return float(np.mean(labels * np.log(r) + (1 - labels) * np.log(1 - r)))


def soft_loglik_gradient(weights, design, labels) -> np.ndarray:
    """Gradient of :func:`soft_loglik`: mean of (p_i - r_i) * phi(x_i)."""
    design = np.asarray(design, dtype=np.float64)
    r = expit(design @ np.asarray(weights))
    resid = np.asarray(labels, dtype=np.float64) - r
    return design.T @ resid / design.shape[0]


@njit(cache=True)
def _sgd_loop(design, labels, order, eta, w):  # pragma: no cover (jitted)
    k = design.shape[1]
    for step in range(order.shape[0]):
        i = order[step]
        z = 0.0
        for j in range(k):
            z += w[j] * design[i, j]
        if z > 500.0:
            r = 1.0
        elif z < -500.0:
            r = 0.0
        else:
            r = 1.0 / (1.0 + np.exp(-z))
        g = eta * (labels[i] - r)
        for j in range(k):
            w[j] += g * design[i, j]
    return w


def sgd_ascend(design, labels, config: SGDConfig) -> np.ndarray:
    """Run the per-row ascent from zero weights; deterministic given seed."""
    design = np.ascontiguousarray(as_matrix(design, "design"))
    labels = as_soft_labels(labels, "labels", design.shape[0])
    n = design.shape[0]
    rng = rng_from(config.seed)
    order = np.empty(config.iterations * n, dtype=np.int64)
    for e in range(config.iterations):
        order[e * n:(e + 1) * n] = rng.permutation(n)
    w = np.zeros(design.shape[1])
    return _sgd_loop(design, labels, order, float(config.learning_rate), w)


def fit_soft_logistic(X, soft_labels, basis: Basis,
                      config: SGDConfig = SGDConfig(), T=None) -> LogisticModel:
    """Distill soft treatment labels into a logistic model over the basis."""
    design = basis.transform(X, T)
    w = sgd_ascend(design, soft_labels, config)
    return LogisticModel(w, basis.names)


@dataclass(frozen=True)
class LogisticOutcomeModel:
    """Direct-fit outcome model over main effects, T, and X-by-T interactions."""

    model: LogisticModel
    basis: Basis

    def predict_po(self, X) -> tuple[np.ndarray, np.ndarray]:
        n = np.asarray(X).shape[0]
        p0 = self.model.predict_proba(self.basis.transform(X, np.zeros(n)))
        p1 = self.model.predict_proba(self.basis.transform(X, np.ones(n)))
        return p0, p1


def fit_direct_logistic(dataset: Dataset,
                        config: SGDConfig = SGDConfig()) -> LogisticOutcomeModel:
    """Fit the observed-data logistic outcome model by the same SGD."""
    basis = interaction_basis(dataset.columns)
    design = basis.transform(dataset.X, dataset.T)
    w = sgd_ascend(design, dataset.Y.astype(np.float64), config)
    return LogisticOutcomeModel(LogisticModel(w, basis.names), basis)


class SGDLogistic(BaseEstimator):
    """sklearn-style wrapper: fit targets in [0, 1] over a precomputed design."""

    def __init__(self, learning_rate: float = 0.01, iterations: int = 1000,
                 seed: int = 0):
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.seed = seed

    def fit(self, X, y):
        config = SGDConfig(self.learning_rate, self.iterations, 1, self.seed)
        self.coef_ = sgd_ascend(X, y, config)
        return self

    def predict_proba(self, X) -> np.ndarray:
        return expit(as_matrix(X) @ self.coef_)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(np.int8)
