"""Depth-constrained regression trees fit to soft labels by cross-entropy.

A tree is grown top-down by exhaustive scan over (column, cutoff) pairs,
maximizing the gain in the soft-label log-likelihood; a leaf's weight is the
mean soft label of the rows routed to it, which maximizes the per-region
objective.  Sibling leaves that agree on the implied treatment decision are
merged bottom-up.  Hard 0/1 labels are the degenerate case of the same
machinery, which is how the direct-fit outcome trees are produced.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .data import ColumnSpec, Dataset, model_matrix
from .exceptions import ParameterError, SchemaMismatchError
from .validation import as_matrix, as_soft_labels

LOG_EPS = 1e-12
DEFAULT_MIN_GAIN = 1e-9
# candidates whose gain is within this of the maximum count as tied and are
# resolved by (lowest column, lowest cutoff)
GAIN_TIE_TOL = 1e-9


@dataclass(frozen=True)
class TreeConfig:
    d_max: int = 2
    n_obs: int = 5
    min_gain: float = DEFAULT_MIN_GAIN

    def __post_init__(self):
        if self.d_max < 1:
            raise ParameterError("d_max must be >= 1")
        if self.n_obs < 1:
            raise ParameterError("n_obs must be >= 1")
        if self.min_gain < 0:
            raise ParameterError("min_gain must be >= 0")


@dataclass
class TreeLeaf:
    weight: float
    count: int
    region: int = -1

    @property
    def decision(self) -> int:
        return int(self.weight > 0.5)


@dataclass
class TreeSplit:
    col: int
    cutoff: float
    left: "TreeLeaf | TreeSplit"
    right: "TreeLeaf | TreeSplit"


def _leaf_loglik(n: float, s: float) -> float:
    """Region objective at the optimal weight s/n, with boundary clamping."""
    w = s / n
    wc = min(max(w, LOG_EPS), 1.0 - LOG_EPS)
    return s * math.log(wc) + (n - s) * math.log(1.0 - wc)


def region_objective(labels) -> tuple[float, float]:
    """Optimal weight (the label mean) and objective value for one region."""
    labels = as_soft_labels(labels, "labels")
    if labels.shape[0] == 0:
        raise ParameterError("region must be nonempty")
    n = labels.shape[0]
    s = math.fsum(labels)
    return s / n, _leaf_loglik(n, s)


def _column_candidates(v: np.ndarray, labels: np.ndarray, kind: str,
                       n_obs: int, parent_ll: float):
    """Gains for every admissible cutoff of one column, ascending cutoffs."""
    n = v.shape[0]
    order = np.argsort(v, kind="stable")
    sv = v[order]
    csum = np.cumsum(labels[order])
    bounds = np.nonzero(sv[:-1] < sv[1:])[0]
    if bounds.size == 0:
        return None
    n_left = bounds + 1
    keep = (n_left > n_obs) & (n - n_left > n_obs)
    if not np.any(keep):
        return None
    bounds = bounds[keep]
    n_left = n_left[keep].astype(np.float64)
    s_left = csum[bounds]
    s_total = csum[-1]
    n_right = n - n_left
    s_right = s_total - s_left
    w_l = np.clip(s_left / n_left, LOG_EPS, 1 - LOG_EPS)
    w_r = np.clip(s_right / n_right, LOG_EPS, 1 - LOG_EPS)
    ll = (s_left * np.log(w_l) + (n_left - s_left) * np.log(1 - w_l)
          + s_right * np.log(w_r) + (n_right - s_right) * np.log(1 - w_r))
    gains = ll - parent_ll
    if kind == "continuous":
        cutoffs = 0.5 * (sv[bounds] + sv[bounds + 1])
    else:
        cutoffs = sv[bounds]
    return cutoffs, gains


def best_split(X, labels, candidate_columns=None,
               config: TreeConfig = TreeConfig(), kinds=None):
    """Best (column, cutoff, gain) over all admissible splits, or None.

    A split is admissible when both children exceed ``n_obs`` rows; it is
    returned only when its gain strictly exceeds ``min_gain``.  Cutoffs are
    the observed values for binary/ordinal columns and midpoints between
    consecutive distinct values for continuous columns.  Gain ties (within
    a small tolerance) resolve to the lowest column index, then the lowest
    cutoff.
    """
    X = as_matrix(X)
    labels = as_soft_labels(labels, "labels", X.shape[0])
    n, p = X.shape
    if n <= config.n_obs:
        raise ParameterError(f"need more than n_obs={config.n_obs} rows to split")
    if candidate_columns is None:
        candidate_columns = range(p)
    kinds = _check_kinds(kinds, p)
    parent_ll = _leaf_loglik(n, math.fsum(labels))

    found: list[tuple[int, float, float]] = []
    for j in sorted(candidate_columns):
        got = _column_candidates(X[:, j], labels, kinds[j], config.n_obs, parent_ll)
        if got is None:
            continue
        cutoffs, gains = got
        col_max = float(np.max(gains))
        near = np.nonzero(gains >= col_max - GAIN_TIE_TOL)[0]
        for i in near:
            found.append((j, float(cutoffs[i]), float(gains[i])))
    if not found:
        return None
    gmax = max(g for _, _, g in found)
    for j, cutoff, gain in found:  # column- then cutoff-ascending
        if gain >= gmax - GAIN_TIE_TOL:
            best = (j, cutoff, gain)
            break
    if best[2] > config.min_gain:
        return best
    return None


def _check_kinds(kinds, p: int) -> list[str]:
    if kinds is None:
        return ["continuous"] * p
    kinds = list(kinds)
    if len(kinds) != p:
        raise ParameterError("kinds must align with columns")
    for k in kinds:
        if k == "categorical":
            raise ParameterError(
                "categorical columns must be one-hot expanded before tree fitting"
            )
        if k not in ("binary", "ordinal", "continuous"):
            raise ParameterError(f"unknown column kind {k!r}")
    return kinds


@dataclass(frozen=True)
class SoftLabelTree:
    """A fitted depth-constrained tree over named feature columns."""

    root: TreeLeaf | TreeSplit
    feature_names: tuple[str, ...]
    config: TreeConfig = field(default_factory=TreeConfig)

    def leaves(self) -> list[TreeLeaf]:
        out: list[TreeLeaf] = []

        def rec(node):
            if isinstance(node, TreeLeaf):
                out.append(node)
            else:
                rec(node.left)
                rec(node.right)

        rec(self.root)
        return out

    def depth(self) -> int:
        def rec(node):
            if isinstance(node, TreeLeaf):
                return 0
            return 1 + max(rec(node.left), rec(node.right))

        return rec(self.root)

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = as_matrix(X)
        if X.shape[1] != len(self.feature_names):
            raise SchemaMismatchError(
                f"tree expects {len(self.feature_names)} columns, got {X.shape[1]}"
            )
        return X

    def weights(self, X) -> np.ndarray:
        """Leaf weight reached by each row."""
        X = self._check(X)
        out = np.empty(X.shape[0])
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if isinstance(node, TreeLeaf):
                out[rows] = node.weight
            else:
                mask = X[rows, node.col] <= node.cutoff
                stack.append((node.left, rows[mask]))
                stack.append((node.right, rows[~mask]))
        return out

    def decide(self, X) -> np.ndarray:
        return (self.weights(X) > 0.5).astype(np.int8)

    def route(self, x) -> TreeLeaf:
        x = np.asarray(x, dtype=np.float64).ravel()
        node = self.root
        while isinstance(node, TreeSplit):
            node = node.left if x[node.col] <= node.cutoff else node.right
        return node


def tree_rule(tree: SoftLabelTree, x) -> int:
    """Treatment decision for one covariate row: 1{leaf weight > 0.5}."""
    return tree.route(x).decision


def fit_soft_tree(X, labels, config: TreeConfig = TreeConfig(),
                  kinds=None, feature_names=None, merge: bool = True) -> SoftLabelTree:
    """Grow a tree on soft labels, then merge decision-identical siblings.

    Recursion stops when the depth bound binds, a child would fall to
    ``n_obs`` rows or fewer, or the best gain does not exceed ``min_gain``.
    """
    X = as_matrix(X)
    labels = as_soft_labels(labels, "labels", X.shape[0])
    n, p = X.shape
    if n <= config.n_obs:
        raise ParameterError(f"need n > n_obs={config.n_obs} rows to fit")
    kinds = _check_kinds(kinds, p)
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(p))
    else:
        feature_names = tuple(feature_names)
        if len(feature_names) != p:
            raise ParameterError("feature_names must align with columns")

    def build(Xs: np.ndarray, ls: np.ndarray, depth: int):
        w, _ = region_objective(ls)
        if depth < config.d_max and ls.shape[0] > config.n_obs:
            got = best_split(Xs, ls, None, config, kinds)
            if got is not None:
                j, cutoff, _gain = got
                mask = Xs[:, j] <= cutoff
                return TreeSplit(
                    j, cutoff,
                    build(Xs[mask], ls[mask], depth + 1),
                    build(Xs[~mask], ls[~mask], depth + 1),
                )
        return TreeLeaf(weight=w, count=int(ls.shape[0]))

    tree = SoftLabelTree(build(X, labels, 0), feature_names, config)
    if merge:
        tree = merge_siblings(tree)
    _assign_regions(tree)
    return tree


def _assign_regions(tree: SoftLabelTree) -> None:
    for m, leaf in enumerate(tree.leaves()):
        leaf.region = m


def merge_siblings(tree: SoftLabelTree) -> SoftLabelTree:
    """Merge sibling leaves whose decisions agree, bottom-up to a fixpoint.

    The merged weight is the count-weighted mean of the children, so it
    remains the mean soft label of the rows routed to the merged region,
    and no input's decision changes.
    """

    def rec(node):
        if isinstance(node, TreeLeaf):
            return TreeLeaf(node.weight, node.count, node.region)
        left = rec(node.left)
        right = rec(node.right)
        if (isinstance(left, TreeLeaf) and isinstance(right, TreeLeaf)
                and left.decision == right.decision):
            count = left.count + right.count
            weight = (left.weight * left.count + right.weight * right.count) / count
            return TreeLeaf(weight, count)
        return TreeSplit(node.col, node.cutoff, left, right)

    merged = SoftLabelTree(rec(tree.root), tree.feature_names, tree.config)
    _assign_regions(merged)
    return merged


# ---------------------------------------------------------------------------
# sklearn-style wrapper
# ---------------------------------------------------------------------------


class CrossEntropyTree(BaseEstimator):
    """Depth-constrained tree for targets in [0, 1] (soft or hard labels)."""

    def __init__(self, max_depth: int = 2, min_node: int = 5,
                 min_gain: float = DEFAULT_MIN_GAIN, merge: bool = True):
        self.max_depth = max_depth
        self.min_node = min_node
        self.min_gain = min_gain
        self.merge = merge

    def fit(self, X, y, kinds=None, feature_names=None):
        config = TreeConfig(self.max_depth, self.min_node, self.min_gain)
        self.tree_ = fit_soft_tree(X, y, config, kinds, feature_names,
                                   merge=self.merge)
        return self

    def predict_proba(self, X) -> np.ndarray:
        return self.tree_.weights(X)

    def predict(self, X) -> np.ndarray:
        return self.tree_.decide(X)


# ---------------------------------------------------------------------------
# dataset-facing fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistilledTreeRule:
    """A rule tree bound to its covariate schema."""

    tree: SoftLabelTree
    columns: tuple[ColumnSpec, ...]

    def weights(self, X) -> np.ndarray:
        M, _, _ = model_matrix(self.columns, X)
        return self.tree.weights(M)

    def decide(self, X) -> np.ndarray:
        return (self.weights(X) > 0.5).astype(np.int8)


def distill_tree(columns: tuple[ColumnSpec, ...], X, soft_labels,
                 config: TreeConfig = TreeConfig()) -> DistilledTreeRule:
    """Fit an interpretable rule tree to soft treatment labels over covariates."""
    M, names, kinds = model_matrix(columns, X)
    tree = fit_soft_tree(M, soft_labels, config, kinds, names, merge=True)
    return DistilledTreeRule(tree, columns)


@dataclass(frozen=True)
class TreeOutcomeModel:
    """Direct-fit outcome tree over (X, T); imputes both potential outcomes."""

    tree: SoftLabelTree
    columns: tuple[ColumnSpec, ...]

    def predict_po(self, X) -> tuple[np.ndarray, np.ndarray]:
        M, _, _ = model_matrix(self.columns, X)
        n = M.shape[0]
        m0 = np.column_stack([M, np.zeros(n)])
        m1 = np.column_stack([M, np.ones(n)])
        # pure leaves give 0/1; clamp so downstream joints stay valid
        p0 = np.clip(self.tree.weights(m0), LOG_EPS, 1 - LOG_EPS)
        p1 = np.clip(self.tree.weights(m1), LOG_EPS, 1 - LOG_EPS)
        return p0, p1


def fit_direct_tree(dataset: Dataset, config: TreeConfig = TreeConfig()) -> TreeOutcomeModel:
    """Outcome tree fit to observed (X, T, Y); no sibling merging."""
    M, names, kinds = model_matrix(dataset.columns, dataset.X, dataset.T)
    tree = fit_soft_tree(M, dataset.Y.astype(np.float64), config, kinds, names,
                         merge=False)
    return TreeOutcomeModel(tree, dataset.columns)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------


def tree_to_text(tree: SoftLabelTree) -> str:
    lines: list[str] = []

    def rec(node, pad):
        if isinstance(node, TreeLeaf):
            lines.append(
                f"{pad}region {node.region}: n={node.count} "
                f"weight={node.weight:.4f} decision={node.decision}"
            )
        else:
            name = tree.feature_names[node.col]
            lines.append(f"{pad}if {name} <= {node.cutoff:g}:")
            rec(node.left, pad + "    ")
            lines.append(f"{pad}else:")
            rec(node.right, pad + "    ")

    rec(tree.root, "")
    return "\n".join(lines) + "\n"


def tree_to_dot(tree: SoftLabelTree) -> str:
    lines = ["digraph rule_tree {", "  node [shape=box];"]
    counter = [0]

    def rec(node) -> int:
        nid = counter[0]
        counter[0] += 1
        if isinstance(node, TreeLeaf):
            lines.append(
                f'  n{nid} [label="region {node.region}\\nn={node.count}'
                f'\\nw={node.weight:.4f}\\ndecision={node.decision}"];'
            )
        else:
            name = tree.feature_names[node.col]
            lines.append(f'  n{nid} [label="{name} <= {node.cutoff:g}"];')
            lid = rec(node.left)
            rid = rec(node.right)
            lines.append(f'  n{nid} -> n{lid} [label="yes"];')
            lines.append(f'  n{nid} -> n{rid} [label="no"];')
        return nid

    rec(tree.root)
    lines.append("}")
    return "\n".join(lines) + "\n"


def _node_to_obj(node):
    if isinstance(node, TreeLeaf):
        return {"weight": node.weight, "count": node.count, "region": node.region}
    return {
        "col": node.col,
        "cutoff": node.cutoff,
        "left": _node_to_obj(node.left),
        "right": _node_to_obj(node.right),
    }


def _node_from_obj(obj):
    if "weight" in obj:
        return TreeLeaf(obj["weight"], obj["count"], obj.get("region", -1))
    return TreeSplit(obj["col"], obj["cutoff"],
                     _node_from_obj(obj["left"]), _node_from_obj(obj["right"]))


def tree_to_json(tree: SoftLabelTree) -> str:
    obj = {
        "format": "itrules-rule-tree",
        "version": 1,
        "feature_names": list(tree.feature_names),
        "config": {"d_max": tree.config.d_max, "n_obs": tree.config.n_obs,
                   "min_gain": tree.config.min_gain},
        "root": _node_to_obj(tree.root),
    }
    return json.dumps(obj, indent=2)


def tree_from_json(text: str) -> SoftLabelTree:
    obj = json.loads(text)
    if obj.get("format") != "itrules-rule-tree":
        raise ParameterError("not a rule-tree artifact")
    config = TreeConfig(**obj["config"])
    return SoftLabelTree(_node_from_obj(obj["root"]),
                         tuple(obj["feature_names"]), config)
