"""Core data model: datasets with typed columns, loss specifications, rules.

The on-disk dataset format is a plain CSV (header row, one row per
individual) accompanied by a JSON schema sidecar that assigns each column a
role (``covariate``, ``treatment``, ``outcome``) and, for covariates, a kind
(``binary``, ``ordinal``, ``categorical``, ``continuous``).  Ordinal and
categorical columns are integer coded ``1..levels``.  Missing values are
rejected at ingestion.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import IngestionError, ParameterError
from .validation import readonly

KINDS = ("binary", "ordinal", "continuous", "categorical")


@dataclass(frozen=True)
class ColumnKind:
    """Value domain of one covariate column."""

    kind: str
    levels: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown column kind {self.kind!r}")
        if self.kind in ("ordinal", "categorical"):
            if self.levels is None or self.levels < 2:
                raise ParameterError(f"{self.kind} columns need levels >= 2")
        elif self.levels is not None:
            raise ParameterError(f"{self.kind} columns take no levels")

    @classmethod
    def binary(cls) -> "ColumnKind":
        return cls("binary")

    @classmethod
    def ordinal(cls, levels: int) -> "ColumnKind":
        return cls("ordinal", levels)

    @classmethod
    def categorical(cls, levels: int) -> "ColumnKind":
        return cls("categorical", levels)

    @classmethod
    def continuous(cls) -> "ColumnKind":
        return cls("continuous")

    def conforms(self, v: float) -> bool:
        if not np.isfinite(v):
            return False
        if self.kind == "binary":
            return v in (0.0, 1.0)
        if self.kind in ("ordinal", "categorical"):
            return v == int(v) and 1 <= v <= self.levels
        return True


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: ColumnKind


@dataclass(frozen=True)
class Dataset:
    """Immutable (X, T, Y) triple with column metadata.

    ``X`` is an ``n x p`` float matrix whose entries conform to their
    column kinds; ``T`` and ``Y`` are 0/1 vectors of length ``n``.
    """

    columns: tuple[ColumnSpec, ...]
    X: np.ndarray
    T: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        T = np.asarray(self.T, dtype=np.int8).ravel()
        Y = np.asarray(self.Y, dtype=np.int8).ravel()
        if X.ndim != 2:
            raise ParameterError("X must be 2-d")
        n, p = X.shape
        if n < 1:
            raise ParameterError("dataset must contain at least one row")
        if p != len(self.columns):
            raise ParameterError(
                f"X has {p} columns but {len(self.columns)} column specs were given"
            )
        if T.shape[0] != n or Y.shape[0] != n:
            raise ParameterError("X, T, Y must have equal row counts")
        for vec, name in ((T, "T"), (Y, "Y")):
            if not np.all((vec == 0) | (vec == 1)):
                raise ParameterError(f"{name} must contain only 0/1 values")
        for j, spec in enumerate(self.columns):
            col = X[:, j]
            bad = _nonconforming_rows(col, spec.kind)
            if bad.size:
                raise ParameterError(
                    f"column {spec.name!r} has a value {col[bad[0]]!r} at row "
                    f"{bad[0] + 1} that does not conform to kind {spec.kind.kind!r}"
                )
        object.__setattr__(self, "X", readonly(X))
        object.__setattr__(self, "T", readonly(T))
        object.__setattr__(self, "Y", readonly(Y))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column_index(self, name: str) -> int:
        for j, c in enumerate(self.columns):
            if c.name == name:
                return j
        raise KeyError(name)

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.columns, self.X[idx], self.T[idx], self.Y[idx])


def _nonconforming_rows(col: np.ndarray, kind: ColumnKind) -> np.ndarray:
    ok = np.isfinite(col)
    if kind.kind == "binary":
        ok &= (col == 0) | (col == 1)
    elif kind.kind in ("ordinal", "categorical"):
        ok &= (col == np.floor(col)) & (col >= 1) & (col <= kind.levels)
    return np.nonzero(~ok)[0]


# ---------------------------------------------------------------------------
# CSV + schema sidecar I/O
# ---------------------------------------------------------------------------

_ROLES = ("covariate", "treatment", "outcome")


def _parse_schema(schema_path) -> tuple[list[dict], str, str]:
    try:
        with open(schema_path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise IngestionError(f"cannot read schema {schema_path}: {e}") from e
    cols = raw.get("columns")
    if not isinstance(cols, list) or not cols:
        raise IngestionError("schema must contain a non-empty 'columns' list")
    treatment = outcome = None
    for c in cols:
        role = c.get("role")
        if role not in _ROLES:
            raise IngestionError(f"column {c.get('name')!r} has unknown role {role!r}")
        if role == "treatment":
            if treatment is not None:
                raise IngestionError("schema declares more than one treatment column")
            treatment = c["name"]
        elif role == "outcome":
            if outcome is not None:
                raise IngestionError("schema declares more than one outcome column")
            outcome = c["name"]
    if treatment is None:
        raise IngestionError("schema declares no treatment column")
    if outcome is None:
        raise IngestionError("schema declares no outcome column")
    return cols, treatment, outcome


def load_dataset(csv_path, schema_path) -> Dataset:
    """Read and validate a dataset from a CSV file plus schema sidecar.

    Raises :class:`IngestionError` naming the row/column on any violation:
    unknown or missing columns, non-conforming or missing values, absent
    treatment/outcome roles.
    """
    schema_cols, treatment_name, outcome_name = _parse_schema(schema_path)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{csv_path} is empty") from None
        rows = list(reader)
    if not rows:
        raise IngestionError(f"{csv_path} contains no data rows")

    declared = {c["name"] for c in schema_cols}
    unknown = [h for h in header if h not in declared]
    if unknown:
        raise IngestionError(f"CSV contains undeclared column(s): {unknown}")
    missing = [c["name"] for c in schema_cols if c["name"] not in header]
    if missing:
        raise IngestionError(f"CSV is missing declared column(s): {missing}")

    pos = {h: i for i, h in enumerate(header)}
    specs: list[ColumnSpec] = []
    for c in schema_cols:
        if c["role"] == "covariate":
            kind = c.get("kind")
            if kind not in KINDS:
                raise IngestionError(
                    f"covariate {c['name']!r} has unknown kind {kind!r}"
                )
            specs.append(ColumnSpec(c["name"], ColumnKind(kind, c.get("levels"))))

    n = len(rows)
    X = np.empty((n, len(specs)), dtype=np.float64)
    T = np.empty(n, dtype=np.int8)
    Y = np.empty(n, dtype=np.int8)

    def parse_cell(i: int, name: str) -> float:
        raw = rows[i][pos[name]] if pos[name] < len(rows[i]) else ""
        if raw.strip() == "":
            raise IngestionError(f"missing value in column {name!r}, row {i + 1}")
        try:
            return float(raw)
        except ValueError:
            raise IngestionError(
                f"non-numeric value {raw!r} in column {name!r}, row {i + 1}"
            ) from None

    for i in range(n):
        for j, spec in enumerate(specs):
            v = parse_cell(i, spec.name)
            if not spec.kind.conforms(v):
                raise IngestionError(
                    f"value {v!r} in column {spec.name!r}, row {i + 1} does not "
                    f"conform to kind {spec.kind.kind!r}"
                )
            X[i, j] = v
        for name, out in ((treatment_name, T), (outcome_name, Y)):
            v = parse_cell(i, name)
            if v not in (0.0, 1.0):
                raise IngestionError(
                    f"value {v!r} in column {name!r}, row {i + 1} is not 0/1"
                )
            out[i] = int(v)
    return Dataset(tuple(specs), X, T, Y)


def save_dataset(dataset: Dataset, csv_path, schema_path,
                 treatment_name: str = "T", outcome_name: str = "Y") -> None:
    """Write a dataset back to CSV + schema sidecar.

    Integer-coded columns round-trip bit-exactly; continuous columns are
    written with ``repr`` so they reload to the identical float64.
    """
    schema = {"columns": []}
    for spec in dataset.columns:
        entry = {"name": spec.name, "role": "covariate", "kind": spec.kind.kind}
        if spec.kind.levels is not None:
            entry["levels"] = spec.kind.levels
        schema["columns"].append(entry)
    schema["columns"].append({"name": treatment_name, "role": "treatment"})
    schema["columns"].append({"name": outcome_name, "role": "outcome"})
    with open(schema_path, "w") as fh:
        json.dump(schema, fh, indent=2)
        fh.write("\n")

    is_int = [spec.kind.kind != "continuous" for spec in dataset.columns]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.column_names) + [treatment_name, outcome_name])
        for i in range(dataset.n):
            row = [
                str(int(v)) if as_int else repr(float(v))
                for v, as_int in zip(dataset.X[i], is_int)
            ]
            row.append(str(int(dataset.T[i])))
            row.append(str(int(dataset.Y[i])))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Loss specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossTable:
    """Eight-entry loss ``l[j][k][t]`` indexed by (Y(1)=j, Y(0)=k, T=t)."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.shape != (2, 2, 2):
            raise ParameterError("loss table must have shape (2, 2, 2)")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise ParameterError("loss entries must be finite and nonnegative")
        object.__setattr__(self, "table", readonly(t))

    def __getitem__(self, jkt):
        j, k, t = jkt
        return float(self.table[j, k, t])


@dataclass(frozen=True)
class AdditiveLoss:
    """Loss split into a treatment cost and an undesirable-outcome cost.

    ``c_t`` is the loss of administering the treatment; ``c_d`` the loss of
    the undesirable outcome (Y=0) under the chosen arm.  Their ratio
    ``c_t / c_d`` acts as the decision threshold on the treatment effect.
    """

    c_t: float
    c_d: float

    def __post_init__(self):
        if not np.isfinite(self.c_t) or self.c_t < 0:
            raise ParameterError("c_t must be finite and >= 0")
        if not np.isfinite(self.c_d) or self.c_d <= 0:
            raise ParameterError("c_d must be finite and > 0")

    @property
    def threshold(self) -> float:
        return self.c_t / self.c_d

    @classmethod
    def from_threshold_percent(cls, percent: float, c_d: float = 1.0) -> "AdditiveLoss":
        if percent < 0 or percent > 100:
            raise ParameterError("threshold percent must lie in [0, 100]")
        return cls(c_t=c_d * percent / 100.0, c_d=c_d)

    def expand(self) -> LossTable:
        return expand_additive(self)


def expand_additive(loss: AdditiveLoss) -> LossTable:
    """Expand (c_t, c_d) into the full eight-entry table.

    Every treated cell gains c_t; cells where the realized outcome under the
    chosen arm is 0 gain c_d.
    """
    c_t, c_d = loss.c_t, loss.c_d
    table = np.zeros((2, 2, 2))
    for j in (0, 1):
        for k in (0, 1):
            table[j, k, 1] = c_t + (c_d if j == 0 else 0.0)
            table[j, k, 0] = c_d if k == 0 else 0.0
    return LossTable(table)


def as_loss_table(loss: AdditiveLoss | LossTable) -> LossTable:
    return loss.expand() if isinstance(loss, AdditiveLoss) else loss


# ---------------------------------------------------------------------------
# Treatment rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TreatmentRule:
    """A treatment-assignment producer.

    Either a fixed assignment vector (optionally with per-individual
    treatment probabilities) or a wrapped model exposing
    ``decide(X) -> 0/1 vector`` such as a soft-label tree or a logistic
    rule model.
    """

    kind: str
    assignments: np.ndarray | None = None
    p: np.ndarray | None = None
    model: object | None = field(default=None, compare=False)

    @classmethod
    def from_assignments(cls, assignments, p=None) -> "TreatmentRule":
        a = np.asarray(assignments, dtype=np.int8).ravel()
        if not np.all((a == 0) | (a == 1)):
            raise ParameterError("assignments must be 0/1")
        pv = None
        if p is not None:
            pv = np.asarray(p, dtype=np.float64).ravel()
            if pv.shape != a.shape:
                raise ParameterError("p must match assignments in length")
            if np.any(pv < 0) or np.any(pv > 1):
                raise ParameterError("p must lie in [0, 1]")
            # tie at 0.5 maps to control
            if not np.array_equal((pv > 0.5).astype(np.int8), a):
                raise ParameterError("assignments must equal 1{p > 0.5}")
            pv = readonly(pv)
        return cls("assignments", assignments=readonly(a), p=pv)

    @classmethod
    def from_model(cls, model, kind: str) -> "TreatmentRule":
        if not hasattr(model, "decide"):
            raise ParameterError("rule model must expose decide(X)")
        return cls(kind, model=model)

    def decide(self, X=None) -> np.ndarray:
        """Assignments for the rows of X (or the stored vector)."""
        if self.kind == "assignments":
            if X is not None and np.asarray(X).shape[0] != self.assignments.shape[0]:
                raise ParameterError("fixed assignments do not cover the given rows")
            return self.assignments
        return np.asarray(self.model.decide(X), dtype=np.int8)


# ---------------------------------------------------------------------------
# Model-facing design matrix
# ---------------------------------------------------------------------------


def model_matrix(columns: tuple[ColumnSpec, ...], X: np.ndarray,
                 T: np.ndarray | None = None
                 ) -> tuple[np.ndarray, list[str], list[str]]:
    """Expand covariates for model fitting.

    Categorical columns are one-hot expanded (the stored dataset keeps them
    integer coded); binary, ordinal and continuous columns pass through.
    When ``T`` is given it is appended as the final column.  Returns the
    matrix, the expanded column names, and the expanded column kinds.
    """
    X = np.asarray(X, dtype=np.float64)
    cols: list[np.ndarray] = []
    names: list[str] = []
    kinds: list[str] = []
    for j, spec in enumerate(columns):
        if spec.kind.kind == "categorical":
            for level in range(1, spec.kind.levels + 1):
                cols.append((X[:, j] == level).astype(np.float64))
                names.append(f"{spec.name}={level}")
                kinds.append("binary")
        else:
            cols.append(X[:, j])
            names.append(spec.name)
            kinds.append(spec.kind.kind)
    if T is not None:
        cols.append(np.asarray(T, dtype=np.float64).ravel())
        names.append("T")
        kinds.append("binary")
    return np.column_stack(cols), names, kinds
