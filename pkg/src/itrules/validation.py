"""Input-validation helpers used at estimator and operation boundaries."""

from __future__ import annotations

import numpy as np

from .exceptions import ParameterError


def as_matrix(X, name: str = "X") -> np.ndarray:
    A = np.asarray(X, dtype=np.float64)
    if A.ndim != 2:
        raise ParameterError(f"{name} must be a 2-d array, got ndim={A.ndim}")
    if A.shape[0] < 1:
        raise ParameterError(f"{name} must have at least one row")
    if not np.all(np.isfinite(A)):
        raise ParameterError(f"{name} contains non-finite values")
    return A


def as_vector(y, name: str = "y", length: int | None = None) -> np.ndarray:
    v = np.asarray(y, dtype=np.float64).ravel()
    if length is not None and v.shape[0] != length:
        raise ParameterError(f"{name} has length {v.shape[0]}, expected {length}")
    if not np.all(np.isfinite(v)):
        raise ParameterError(f"{name} contains non-finite values")
    return v


def as_binary_vector(y, name: str = "y", length: int | None = None) -> np.ndarray:
    v = as_vector(y, name, length)
    if not np.all((v == 0) | (v == 1)):
        raise ParameterError(f"{name} must contain only 0/1 values")
    return v.astype(np.int8)


def as_soft_labels(p, name: str = "labels", length: int | None = None) -> np.ndarray:
    v = as_vector(p, name, length)
    if np.any(v < 0) or np.any(v > 1):
        raise ParameterError(f"{name} must lie in [0, 1]")
    return v


def readonly(a: np.ndarray) -> np.ndarray:
    """Return ``a`` flagged read-only (shared-across-workers safety)."""
    a.setflags(write=False)
    return a
