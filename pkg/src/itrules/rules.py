"""Turning potential-outcome probabilities plus a loss into treatment rules.

The joint distribution of the two potential outcomes is built from the two
marginal success probabilities and an assumed correlation ``rho``; expected
losses per arm follow by summing the loss table against the joint cells.
Under the additive loss the resulting argmin collapses to a threshold rule
on the treatment effect, independent of ``rho``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LossTable
from .exceptions import InfeasibleCorrelationError, ParameterError
from .validation import readonly

_FEAS_TOL = 1e-12

# joint cells are ordered (theta00, theta01, theta10, theta11), indices (j, k)
_CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class RuleDistribution:
    """Point-estimate assignments plus per-individual treatment probability.

    ``assignments`` comes from comparing expected losses under the
    draw-averaged joint table; ``p_treat`` is the fraction of posterior
    draws in which treating has strictly lower expected loss.
    """

    assignments: np.ndarray
    p_treat: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int8).ravel()
        p = np.asarray(self.p_treat, dtype=np.float64).ravel()
        if a.shape != p.shape:
            raise ParameterError("assignments and p_treat must align")
        if np.any(p < 0) or np.any(p > 1):
            raise ParameterError("p_treat must lie in [0, 1]")
        object.__setattr__(self, "assignments", readonly(a))
        object.__setattr__(self, "p_treat", readonly(p))


def feasible_rho_interval(theta1, theta0) -> tuple[np.ndarray, np.ndarray]:
    """Correlation bounds admitting a valid joint for the given marginals."""
    theta1 = np.asarray(theta1, dtype=np.float64)
    theta0 = np.asarray(theta0, dtype=np.float64)
    s = np.sqrt(theta1 * (1 - theta1) * theta0 * (1 - theta0))
    lo = (np.maximum(0.0, theta1 + theta0 - 1.0) - theta1 * theta0) / s
    hi = (np.minimum(theta1, theta0) - theta1 * theta0) / s
    return lo, hi


def joint_po(theta1, theta0, rho: float = 0.0, context: str = ""):
    """Joint potential-outcome probabilities from marginals and correlation.

    Returns ``(theta00, theta01, theta10, theta11)`` where
    ``theta_jk = P(Y(1)=j, Y(0)=k)``.  Accepts scalars or arrays.  An
    infeasible ``rho`` raises, reporting the feasible interval rather than
    silently clamping.
    """
    theta1, theta0 = np.broadcast_arrays(
        np.asarray(theta1, dtype=np.float64), np.asarray(theta0, dtype=np.float64)
    )
    scalar = theta1.ndim == 0
    if np.any(theta1 <= 0) or np.any(theta1 >= 1) or np.any(theta0 <= 0) or np.any(theta0 >= 1):
        raise ParameterError("marginals must lie strictly inside (0, 1)")
    if not -1.0 <= rho <= 1.0:
        raise ParameterError("rho must lie in [-1, 1]")
    s = np.sqrt(theta1 * (1 - theta1) * theta0 * (1 - theta0))
    t11 = rho * s + theta1 * theta0
    t10 = theta1 - t11
    t01 = theta0 - t11
    t00 = 1.0 - t11 - t10 - t01
    neg = np.minimum(np.minimum(t00, t01), np.minimum(t10, t11))
    if np.any(neg < -_FEAS_TOL):
        flat = int(np.argmin(neg))
        idx = np.unravel_index(flat, neg.shape) if neg.ndim else ()
        lo, hi = feasible_rho_interval(theta1[idx], theta0[idx])
        where = f"at index {idx}" if idx else ""
        if context:
            where = f"{where} {context}".strip()
        raise InfeasibleCorrelationError(rho, float(lo), float(hi), where)
    if scalar:
        return float(t00), float(t01), float(t10), float(t11)
    return t00, t01, t10, t11


def expected_loss(joint, loss: LossTable, t: int):
    """Expected loss of arm ``t``: sum of l[j][k][t] * theta_jk.

    ``joint`` is the 4-tuple (theta00, theta01, theta10, theta11), scalar or
    array-valued.
    """
    if t not in (0, 1):
        raise ParameterError("t must be 0 or 1")
    total = 0.0
    for cell, (j, k) in zip(joint, _CELLS):
        total = total + loss.table[j, k, t] * np.asarray(cell, dtype=np.float64)
    return total


def _draw_values(draws) -> np.ndarray:
    values = draws.values if hasattr(draws, "values") else np.asarray(draws, dtype=np.float64)
    if values.ndim != 3 or values.shape[2] != 2:
        raise ParameterError("draws must have shape (D, n, 2)")
    return values


def optimal_rule(draws, loss: LossTable, rho: float = 0.0) -> RuleDistribution:
    """Loss-minimizing assignments with Monte-Carlo rule uncertainty.

    Per draw, expected losses under both arms are computed from the joint
    table; ``p_treat`` is the fraction of draws preferring treatment.
    Assignments come from the draw-averaged joint table, with ties going to
    control.
    """
    values = _draw_values(draws)
    theta1 = values[:, :, 1]
    theta0 = values[:, :, 0]
    joint = joint_po(theta1, theta0, rho, context="of the (draw, individual) grid")
    loss1 = expected_loss(joint, loss, 1)
    loss0 = expected_loss(joint, loss, 0)
    p_treat = (loss1 < loss0).mean(axis=0)
    mean_joint = tuple(cell.mean(axis=0) for cell in joint)
    assign = (expected_loss(mean_joint, loss, 1) < expected_loss(mean_joint, loss, 0))
    return RuleDistribution(assign.astype(np.int8), p_treat)


def additive_threshold_rule(tau_hat, c_t: float, c_d: float):
    """1 iff the estimated effect strictly exceeds the threshold c_t / c_d."""
    if c_d <= 0:
        raise ParameterError("c_d must be > 0")
    if c_t < 0:
        raise ParameterError("c_t must be >= 0")
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    out = (tau_hat > c_t / c_d).astype(np.int8)
    return int(out) if out.ndim == 0 else out


def direct_rule(outcome_model, X, loss: LossTable, rho: float = 0.0) -> np.ndarray:
    """Assignments from a direct-fit outcome model.

    The model imputes both potential-outcome probabilities, which enter the
    same decision machinery as a single posterior draw.
    """
    p0, p1 = outcome_model.predict_po(X)
    draws = np.stack([np.column_stack([p0, p1])], axis=0)
    return optimal_rule(draws, loss, rho).assignments
