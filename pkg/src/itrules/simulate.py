"""Synthetic data generation: eight confounded scenarios with known truth.

Covariates are five Bernoulli(0.5) columns ``X_A..X_E``, five ordinal
columns ``X_a..X_e`` uniform on {1,2,3,4}, and two standard-normal columns
``X_Ca, X_Cb``.  Each scenario defines the logit of the outcome probability
as a function of covariates and treatment; the treatment itself is assigned
with probability increasing in the individual's standardized effect size,
which confounds naive comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import ColumnKind, ColumnSpec, Dataset
from .exceptions import DegenerateCateError, ParameterError
from .seeding import child_seed, rng_from
from .validation import readonly

SCENARIO_IDS = ("A", "B", "C", "D", "E", "F", "G", "H")

DEFAULT_CONFOUNDING = math.log(3.0)

_BINARY = [f"X_{u}" for u in "ABCDE"]
_ORDINAL = [f"X_{u}" for u in "abcde"]
_NORMAL = ["X_Ca", "X_Cb"]
COVARIATE_NAMES = _BINARY + _ORDINAL + _NORMAL


def simulation_columns() -> tuple[ColumnSpec, ...]:
    specs = [ColumnSpec(n, ColumnKind.binary()) for n in _BINARY]
    specs += [ColumnSpec(n, ColumnKind.ordinal(4)) for n in _ORDINAL]
    specs += [ColumnSpec(n, ColumnKind.continuous()) for n in _NORMAL]
    return tuple(specs)


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    confounding: float = DEFAULT_CONFOUNDING
    seed: int = 0

    def __post_init__(self):
        if self.id not in SCENARIO_IDS:
            raise ParameterError(f"unknown scenario {self.id!r}")


@dataclass(frozen=True)
class SimPopulation:
    """A dataset carrying its generating truth."""

    dataset: Dataset
    true_p1: np.ndarray
    true_p0: np.ndarray
    true_tau: np.ndarray
    propensity: np.ndarray

    def __post_init__(self):
        n = self.dataset.n
        for name in ("true_p1", "true_p0", "true_tau", "propensity"):
            v = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if v.shape[0] != n:
                raise ParameterError(f"{name} must have length {n}")
            object.__setattr__(self, name, readonly(v))
        if not np.allclose(self.true_tau, self.true_p1 - self.true_p0,
                           rtol=0, atol=1e-12):
            raise ParameterError("true_tau must equal true_p1 - true_p0")
        if np.any(self.propensity <= 0) or np.any(self.propensity >= 1):
            raise ParameterError("propensity must lie strictly inside (0, 1)")

    @property
    def n(self) -> int:
        return self.dataset.n


def sample_covariates(n: int, seed: int) -> np.ndarray:
    """Draw the simulation covariate matrix; deterministic given seed."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    rng = rng_from(seed)
    binaries = rng.integers(0, 2, size=(n, 5)).astype(np.float64)
    ordinals = rng.integers(1, 5, size=(n, 5)).astype(np.float64)
    normals = rng.standard_normal((n, 2))
    return np.column_stack([binaries, ordinals, normals])


def _cols(X: np.ndarray) -> dict[str, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != len(COVARIATE_NAMES):
        raise ParameterError(
            f"expected {len(COVARIATE_NAMES)} simulation covariates, got {X.shape[1]}"
        )
    return {name: X[:, j] for j, name in enumerate(COVARIATE_NAMES)}


def _level(col: np.ndarray, level: int) -> np.ndarray:
    return (col == level).astype(np.float64)


def scenario_logits(scenario: str, X: np.ndarray, t) -> np.ndarray:
    """Vector of outcome logits for the given scenario at treatment ``t``.

    ``t`` may be a scalar in {0,1} or a vector of per-row arms.  Dummy
    notation: a binary covariate enters as itself; an ordinal covariate
    enters through exact-level indicators.
    """
    c = _cols(X)
    tv = np.asarray(t, dtype=np.float64) * np.ones(len(c["X_A"]))
    if np.any((tv != 0) & (tv != 1)):
        raise ParameterError("t must be 0 or 1")
    XA, XB, XC = c["X_A"], c["X_B"], c["X_C"]
    Xa2, Xa3 = _level(c["X_a"], 2), _level(c["X_a"], 3)
    Xb2, Xb3 = _level(c["X_b"], 2), _level(c["X_b"], 3)
    Xc3 = _level(c["X_c"], 3)
    XCa, XCb = c["X_Ca"], c["X_Cb"]
    if scenario == "A":
        return 0.5 * XC + 2.0 * (XB + Xa3 * XA) * tv
    if scenario == "B":
        return 0.5 * XC + 2.0 * (XB + Xa3 * (Xb2 + Xb3)) * tv
    if scenario == "C":
        return 0.05 * (-XA + XB) + ((Xa2 + Xa3) + (Xb2 + Xb3) * XCa) * tv
    if scenario == "D":
        inner = (Xb3 + Xc3) + 5.0 * (Xa2 + Xa3 + XA * XB) * tv + 20.0
        return np.log(np.log(inner**2))
    if scenario == "E":
        return (XA + XB) + 2.0 * tv
    if scenario == "F":
        gate = ((XCa < 5) & (c["X_a"] < 2)).astype(np.float64)
        return 0.5 * XA + 0.5 * XB + 2.0 * gate * tv
    if scenario == "G":
        gate = ((XCa < 5) & (XCb < 2)).astype(np.float64)
        return 0.5 * XA + 0.5 * XB + 2.0 * gate * tv
    if scenario == "H":
        gate = ((XCa < -2) & (XCb > 2)).astype(np.float64)
        return 0.5 * XCa + 0.5 * XCb + 2.0 * gate * tv
    raise ParameterError(f"unknown scenario {scenario!r}")


def true_logit(scenario: str, x: np.ndarray, t: int) -> float:
    """Outcome logit for a single covariate row."""
    return float(scenario_logits(scenario, np.atleast_2d(x), t)[0])


def true_cate_vector(scenario: str, X: np.ndarray) -> np.ndarray:
    return expit(scenario_logits(scenario, X, 1)) - expit(scenario_logits(scenario, X, 0))


def true_cate(scenario: str, x: np.ndarray) -> float:
    return float(true_cate_vector(scenario, np.atleast_2d(x))[0])


def propensity(tau: np.ndarray, confounding: float = DEFAULT_CONFOUNDING) -> np.ndarray:
    """Treatment probabilities increasing in the standardized effect size.

    ``p_i = expit(lambda * (tau_i - mean(tau)) / sd(tau))`` with the sample
    standard deviation over the supplied vector.  Raises
    :class:`DegenerateCateError` when the effects have zero spread.
    """
    tau = np.asarray(tau, dtype=np.float64).ravel()
    if tau.shape[0] < 2:
        raise ParameterError("tau must have length >= 2")
    sd = float(np.std(tau, ddof=1))
    if sd == 0.0 or np.all(tau == tau[0]):
        raise DegenerateCateError("treatment effects have zero spread")
    return expit(confounding * (tau - tau.mean()) / sd)


def generate_population(scenario: str, population_size: int, seed: int,
                        confounding: float = DEFAULT_CONFOUNDING) -> SimPopulation:
    """Simulate a full population with ground truth attached.

    Treatment is Bernoulli(propensity); the outcome is Bernoulli of the true
    probability under the realized arm.  With zero effect heterogeneity the
    propensity falls back to a constant 0.5 so degenerate scenarios remain
    runnable.
    """
    if scenario not in SCENARIO_IDS:
        raise ParameterError(f"unknown scenario {scenario!r}")
    if population_size < 2:
        raise ParameterError("population_size must be >= 2")
    X = sample_covariates(population_size, child_seed(seed, "covariates"))
    p1 = expit(scenario_logits(scenario, X, 1))
    p0 = expit(scenario_logits(scenario, X, 0))
    tau = p1 - p0
    try:
        # rare-subgroup scenarios standardize to huge logits that saturate
        # expit; keep the overlap invariant by staying off the boundary
        ps = np.clip(propensity(tau, confounding), 1e-12, 1 - 1e-12)
    except DegenerateCateError:
        ps = np.full(population_size, 0.5)
    rng = rng_from(child_seed(seed, "assignment"))
    T = (rng.uniform(size=population_size) < ps).astype(np.int8)
    p_realized = np.where(T == 1, p1, p0)
    Y = (rng.uniform(size=population_size) < p_realized).astype(np.int8)
    dataset = Dataset(simulation_columns(), X, T, Y)
    return SimPopulation(dataset, p1, p0, tau, ps)


def draw_sample(population: SimPopulation, n: int, seed: int) -> SimPopulation:
    """Simple random sample without replacement, keeping the ground truth."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    if n > population.n:
        raise ParameterError(
            f"sample size {n} exceeds population size {population.n}"
        )
    idx = rng_from(seed).choice(population.n, size=n, replace=False)
    return SimPopulation(
        population.dataset.take(idx),
        population.true_p1[idx],
        population.true_p0[idx],
        population.true_tau[idx],
        population.propensity[idx],
    )
