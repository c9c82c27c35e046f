"""Flexible outcome model over a dataset: counterfactual posterior draws.

Wraps the probit forest with the dataset schema so prediction can hold all
covariates fixed while toggling the treatment column, optionally after
appending a posterior-mean propensity score estimated by the same model
family.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .bart import BartConfig, _PROB_CLIP, _Sampler, forest_latent
from .data import ColumnKind, ColumnSpec, Dataset, model_matrix
from .exceptions import ParameterError, SchemaMismatchError
from .seeding import child_seed
from .validation import as_matrix, readonly

_MIN_ROWS = 10

ARTIFACT_FORMAT = "itrules-flex-model"


@dataclass(frozen=True)
class PosteriorDraws:
    """D posterior draws of outcome probabilities for each individual and arm.

    ``values[d, i, t]`` is the d-th draw of P(Y=1 | x_i, T=t).
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 2:
            raise ParameterError("values must have shape (D, n, 2)")
        if np.any(v <= 0) or np.any(v >= 1):
            raise ParameterError("draw probabilities must lie strictly in (0, 1)")
        object.__setattr__(self, "values", readonly(v))

    @property
    def D(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def tau_draws(self) -> np.ndarray:
        return self.values[:, :, 1] - self.values[:, :, 0]

    def tau_mean(self) -> np.ndarray:
        return self.tau_draws().mean(axis=0)


def _run_chain(M: np.ndarray, y: np.ndarray, config: BartConfig, seed: int):
    sampler = _Sampler(np.ascontiguousarray(M), np.asarray(y, dtype=np.int8),
                       config, seed)
    return sampler.run()


@dataclass(frozen=True)
class PropensityModel:
    """Posterior-mean P(T=1 | x) from a probit forest over the covariates."""

    forests: list
    n_features: int

    def posterior_mean(self, M: np.ndarray) -> np.ndarray:
        if M.shape[1] != self.n_features:
            raise SchemaMismatchError("covariate width changed since fitting")
        acc = np.zeros(M.shape[0])
        for forest in self.forests:
            acc += ndtr(forest_latent(forest, M))
        return np.clip(acc / len(self.forests), _PROB_CLIP, 1 - _PROB_CLIP)


@dataclass(frozen=True)
class FittedFlexModel:
    """Retained forests plus the training schema needed to predict."""

    columns: tuple[ColumnSpec, ...]
    config: BartConfig
    seed: int
    forests: list
    feature_names: tuple[str, ...]
    t_col: int
    propensity: PropensityModel | None = None

    @property
    def augmented(self) -> bool:
        return self.propensity is not None

    def _covariate_matrix(self, X) -> np.ndarray:
        X = as_matrix(X)
        if X.shape[1] != len(self.columns):
            raise SchemaMismatchError(
                f"expected {len(self.columns)} covariate columns, got {X.shape[1]}"
            )
        for j, spec in enumerate(self.columns):
            col = X[:, j]
            ok = np.ones(col.shape[0], dtype=bool)
            k = spec.kind
            if k.kind == "binary":
                ok = (col == 0) | (col == 1)
            elif k.kind in ("ordinal", "categorical"):
                ok = (col == np.floor(col)) & (col >= 1) & (col <= k.levels)
            if not np.all(ok):
                bad = int(np.nonzero(~ok)[0][0])
                raise SchemaMismatchError(
                    f"column {spec.name!r} row {bad + 1} does not conform to "
                    f"kind {k.kind!r}"
                )
        M, _, _ = model_matrix(self.columns, X)
        if self.augmented:
            M = np.column_stack([M, self.propensity.posterior_mean(M)])
        return M

    def predict_draws(self, X) -> PosteriorDraws:
        """Evaluate every retained forest at T=0 and T=1 for the given rows."""
        M = self._covariate_matrix(X)
        n = M.shape[0]
        m0 = np.column_stack([M, np.zeros(n)])
        m1 = np.column_stack([M, np.ones(n)])
        values = np.empty((len(self.forests), n, 2))
        for d, forest in enumerate(self.forests):
            values[d, :, 0] = ndtr(forest_latent(forest, m0))
            values[d, :, 1] = ndtr(forest_latent(forest, m1))
        return PosteriorDraws(np.clip(values, _PROB_CLIP, 1 - _PROB_CLIP))

    # ------------------------------------------------------------------
    # artifact I/O
    # ------------------------------------------------------------------

    def save(self, path) -> None:
        obj = {
            "format": ARTIFACT_FORMAT,
            "version": 1,
            "columns": [
                {"name": c.name, "kind": c.kind.kind, "levels": c.kind.levels}
                for c in self.columns
            ],
            "config": self.config.__dict__ | {},
            "seed": self.seed,
            "feature_names": list(self.feature_names),
            "t_col": self.t_col,
            "forests": self.forests,
            "propensity": (
                {"forests": self.propensity.forests,
                 "n_features": self.propensity.n_features}
                if self.propensity else None
            ),
        }
        with open(path, "w") as fh:
            json.dump(obj, fh)

    @classmethod
    def load(cls, path) -> "FittedFlexModel":
        with open(path) as fh:
            obj = json.load(fh)
        if obj.get("format") != ARTIFACT_FORMAT or obj.get("version") != 1:
            raise ParameterError(f"{path} is not a flex-model artifact")
        columns = tuple(
            ColumnSpec(c["name"], ColumnKind(c["kind"], c["levels"]))
            for c in obj["columns"]
        )
        prop = obj["propensity"]
        return cls(
            columns=columns,
            config=BartConfig(**obj["config"]),
            seed=obj["seed"],
            forests=obj["forests"],
            feature_names=tuple(obj["feature_names"]),
            t_col=obj["t_col"],
            propensity=(PropensityModel(prop["forests"], prop["n_features"])
                        if prop else None),
        )


def fit_flex(dataset: Dataset, config: BartConfig | None = None, seed: int = 0,
             augment_with_propensity: bool = False) -> FittedFlexModel:
    """Fit the probit forest to (X, T, Y); optionally propensity-augmented.

    With augmentation, a forest of the same family is first fit with the
    treatment as target and its posterior-mean prediction is appended as an
    extra covariate before the outcome model is fit.
    """
    if config is None:
        config = BartConfig.defaults()
    if dataset.n < _MIN_ROWS:
        raise ParameterError(
            f"insufficient data: need at least {_MIN_ROWS} rows, got {dataset.n}"
        )
    M, names, _ = model_matrix(dataset.columns, dataset.X)
    propensity = None
    if augment_with_propensity:
        prop_forests = _run_chain(M, dataset.T, config,
                                  child_seed(seed, "propensity"))
        propensity = PropensityModel(prop_forests, M.shape[1])
        M = np.column_stack([M, propensity.posterior_mean(M)])
        names = names + ["propensity"]
    full = np.column_stack([M, dataset.T.astype(np.float64)])
    names = names + ["T"]
    forests = _run_chain(full, dataset.Y, config, child_seed(seed, "outcome"))
    return FittedFlexModel(
        columns=dataset.columns,
        config=config,
        seed=seed,
        forests=forests,
        feature_names=tuple(names),
        t_col=full.shape[1] - 1,
        propensity=propensity,
    )


def predict_draws(model: FittedFlexModel, X) -> PosteriorDraws:
    """Module-level alias for :meth:`FittedFlexModel.predict_draws`."""
    return model.predict_draws(X)
