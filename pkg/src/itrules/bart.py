"""Sum-of-trees probit model sampled by Bayesian backfitting MCMC.

The binary outcome is linked through ``P(y=1|x) = Phi(G(x))`` where ``G`` is
a sum of regression trees.  A truncated-normal latent variable turns the
probit likelihood into a Gaussian one, after which each tree is updated in
turn against its partial residual: a structural Metropolis step (grow,
prune, or change a bottom split) using the leaf-marginalized likelihood,
followed by a Gibbs draw of its leaf values.  Depth is regularized by the
usual prior: a node at depth ``d`` splits with probability
``alpha * (1 + d) ** (-beta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri
from sklearn.base import BaseEstimator

from .exceptions import ParameterError
from .seeding import rng_from
from .validation import as_binary_vector, as_matrix

_TINY = 1e-300
_PROB_CLIP = 1e-15


def split_prior_prob(depth: int, alpha: float = 0.95, beta: float = 2.0) -> float:
    """Prior probability that a node at the given depth is split."""
    if depth < 0:
        raise ParameterError("depth must be >= 0")
    return alpha * (1.0 + depth) ** (-beta)


@dataclass(frozen=True)
class BartConfig:
    """Sampler settings; ``defaults()`` gives the standard profile and
    ``desk()`` a lighter one for replication sweeps."""

    num_trees: int = 200
    alpha: float = 0.95
    beta: float = 2.0
    leaf_scale_k: float = 2.0
    iterations: int = 1100
    burn_in: int = 100
    p_grow: float = 0.28
    p_prune: float = 0.28
    p_change: float = 0.44

    def __post_init__(self):
        if self.num_trees < 1:
            raise ParameterError("num_trees must be >= 1")
        if not 0 < self.alpha < 1:
            raise ParameterError("alpha must lie in (0, 1)")
        if self.beta <= 0:
            raise ParameterError("beta must be > 0")
        if self.leaf_scale_k <= 0:
            raise ParameterError("leaf_scale_k must be > 0")
        if not 0 <= self.burn_in < self.iterations:
            raise ParameterError("need 0 <= burn_in < iterations")
        probs = (self.p_grow, self.p_prune, self.p_change)
        if any(q < 0 for q in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ParameterError("proposal probabilities must sum to 1")

    @classmethod
    def defaults(cls) -> "BartConfig":
        return cls()

    @classmethod
    def desk(cls) -> "BartConfig":
        return cls(num_trees=50, iterations=600, burn_in=100)

    @property
    def retained(self) -> int:
        return self.iterations - self.burn_in

    def sigma_mu(self) -> float:
        # latent G is kept in roughly (-3, 3): scale 3 / (k * sqrt(m))
        return 3.0 / (self.leaf_scale_k * math.sqrt(self.num_trees))


class _Node:
    __slots__ = ("col", "cut", "left", "right", "parent", "depth", "rows", "value")

    def __init__(self, rows: np.ndarray, depth: int, parent: "_Node | None"):
        self.col = -1  # -1 marks a leaf
        self.cut = 0.0
        self.left: _Node | None = None
        self.right: _Node | None = None
        self.parent = parent
        self.depth = depth
        self.rows = rows
        self.value = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.col < 0


def _leaves(root: _Node) -> list[_Node]:
    out, stack = [], [root]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            out.append(node)
        else:
            stack.append(node.right)
            stack.append(node.left)
    return out


def _prunable(root: _Node) -> list[_Node]:
    """Internal nodes whose children are both leaves."""
    out, stack = [], [root]
    while stack:
        node = stack.pop()
        if not node.is_leaf:
            if node.left.is_leaf and node.right.is_leaf:
                out.append(node)
            else:
                stack.append(node.right)
                stack.append(node.left)
    return out


def _draw_latent(G: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Truncated-normal latent draws: positive where y=1, nonpositive else."""
    u = rng.uniform(size=G.shape[0])
    z = np.empty_like(G)
    pos = y == 1
    arg1 = np.maximum((1.0 - u[pos]) * ndtr(G[pos]), _TINY)
    z[pos] = G[pos] - ndtri(arg1)
    neg = ~pos
    arg0 = np.maximum(u[neg] * ndtr(-G[neg]), _TINY)
    z[neg] = G[neg] + ndtri(arg0)
    np.maximum(z, 1e-10, where=pos, out=z)
    np.minimum(z, -1e-10, where=neg, out=z)
    return z


class _Sampler:
    def __init__(self, X: np.ndarray, y: np.ndarray, config: BartConfig, seed: int):
        self.X = np.ascontiguousarray(X)
        self.y = y
        self.config = config
        self.rng = rng_from(seed)
        n = X.shape[0]
        self.n = n
        self.p = X.shape[1]
        self.sigma_mu2 = config.sigma_mu() ** 2
        self.inv_sm2 = 1.0 / self.sigma_mu2
        self.trees = [_Node(np.arange(n), 0, None) for _ in range(config.num_trees)]
        self.preds = np.zeros((config.num_trees, n))
        self.G = np.zeros(n)

    # marginal likelihood of one leaf's residuals, constants dropped
    def _lml(self, R: np.ndarray, rows: np.ndarray) -> float:
        n_l = rows.shape[0]
        s = float(R[rows].sum())
        denom = 1.0 + n_l * self.sigma_mu2
        return -0.5 * math.log(denom) + self.sigma_mu2 * s * s / (2.0 * denom)

    def _split_candidates(self, rows: np.ndarray, col: int):
        vals = np.unique(self.X[rows, col])
        if vals.shape[0] < 2:
            return None
        return vals

    def _log_structure_ratio(self, depth: int) -> float:
        cfg = self.config
        ps_d = split_prior_prob(depth, cfg.alpha, cfg.beta)
        ps_d1 = split_prior_prob(depth + 1, cfg.alpha, cfg.beta)
        return math.log(ps_d) + 2.0 * math.log(1.0 - ps_d1) - math.log(1.0 - ps_d)

    def _try_grow(self, root: _Node, R: np.ndarray) -> None:
        rng = self.rng
        leaves = _leaves(root)
        b = len(leaves)
        leaf = leaves[int(rng.integers(b))]
        col = int(rng.integers(self.p))
        vals = self._split_candidates(leaf.rows, col)
        if vals is None:
            return
        cut = float(vals[int(rng.integers(vals.shape[0] - 1))])
        mask = self.X[leaf.rows, col] <= cut
        rows_l = leaf.rows[mask]
        rows_r = leaf.rows[~mask]
        delta_lml = (self._lml(R, rows_l) + self._lml(R, rows_r)
                     - self._lml(R, leaf.rows))
        parent = leaf.parent
        parent_prunable = (parent is not None and parent.left.is_leaf
                           and parent.right.is_leaf)
        w2_new = len(_prunable(root)) + 1 - (1 if parent_prunable else 0)
        cfg = self.config
        log_accept = (self._log_structure_ratio(leaf.depth) + delta_lml
                      + math.log(cfg.p_prune / cfg.p_grow)
                      + math.log(b / w2_new))
        if math.log(rng.uniform()) < log_accept:
            leaf.col = col
            leaf.cut = cut
            leaf.left = _Node(rows_l, leaf.depth + 1, leaf)
            leaf.right = _Node(rows_r, leaf.depth + 1, leaf)

    def _try_prune(self, root: _Node, R: np.ndarray) -> None:
        rng = self.rng
        prunables = _prunable(root)
        if not prunables:
            return
        node = prunables[int(rng.integers(len(prunables)))]
        delta_lml = (self._lml(R, node.rows)
                     - self._lml(R, node.left.rows) - self._lml(R, node.right.rows))
        b_after = len(_leaves(root)) - 1
        cfg = self.config
        log_accept = (-self._log_structure_ratio(node.depth) + delta_lml
                      + math.log(cfg.p_grow / cfg.p_prune)
                      + math.log(len(prunables) / b_after))
        if math.log(rng.uniform()) < log_accept:
            node.col = -1
            node.left = None
            node.right = None

    def _try_change(self, root: _Node, R: np.ndarray) -> None:
        rng = self.rng
        prunables = _prunable(root)
        if not prunables:
            return
        node = prunables[int(rng.integers(len(prunables)))]
        col = int(rng.integers(self.p))
        vals = self._split_candidates(node.rows, col)
        if vals is None:
            return
        cut = float(vals[int(rng.integers(vals.shape[0] - 1))])
        mask = self.X[node.rows, col] <= cut
        rows_l = node.rows[mask]
        rows_r = node.rows[~mask]
        log_accept = (self._lml(R, rows_l) + self._lml(R, rows_r)
                      - self._lml(R, node.left.rows) - self._lml(R, node.right.rows))
        if math.log(rng.uniform()) < log_accept:
            node.col = col
            node.cut = cut
            node.left.rows = rows_l
            node.right.rows = rows_r

    def run(self) -> list[list[list]]:
        cfg = self.config
        draws: list[list[list]] = []
        pred_buf = np.empty(self.n)
        for it in range(cfg.iterations):
            Z = _draw_latent(self.G, self.y, self.rng)
            for j in range(cfg.num_trees):
                root = self.trees[j]
                R = Z - self.G + self.preds[j]
                r = self.rng.uniform()
                if r < cfg.p_grow:
                    self._try_grow(root, R)
                elif r < cfg.p_grow + cfg.p_prune:
                    self._try_prune(root, R)
                else:
                    self._try_change(root, R)
                leaves = _leaves(root)
                noise = self.rng.standard_normal(len(leaves))
                for i, leaf in enumerate(leaves):
                    prec = leaf.rows.shape[0] + self.inv_sm2
                    s = float(R[leaf.rows].sum())
                    leaf.value = s / prec + noise[i] / math.sqrt(prec)
                    pred_buf[leaf.rows] = leaf.value
                self.G += pred_buf - self.preds[j]
                self.preds[j] = pred_buf  # row assignment copies
            if it >= cfg.burn_in:
                draws.append([_encode(t) for t in self.trees])
        return draws


def _encode(root: _Node) -> list:
    """Flatten a tree to a JSON-ready node list: leaf [value] or
    [col, cut, left_index, right_index]."""
    nodes: list = []

    def rec(node: _Node) -> int:
        i = len(nodes)
        nodes.append(None)
        if node.is_leaf:
            nodes[i] = [float(node.value)]
        else:
            li = rec(node.left)
            ri = rec(node.right)
            nodes[i] = [int(node.col), float(node.cut), li, ri]
        return i

    rec(root)
    return nodes


def tree_add(nodes: list, X: np.ndarray, out: np.ndarray) -> None:
    """Accumulate one encoded tree's contribution to ``out`` for rows of X."""
    stack = [(0, np.arange(X.shape[0]))]
    while stack:
        i, rows = stack.pop()
        node = nodes[i]
        if len(node) == 1:
            out[rows] += node[0]
        else:
            mask = X[rows, node[0]] <= node[1]
            stack.append((node[2], rows[mask]))
            stack.append((node[3], rows[~mask]))


def forest_latent(forest: list[list], X: np.ndarray) -> np.ndarray:
    """Latent G(x) of one retained draw evaluated on a matrix."""
    out = np.zeros(X.shape[0])
    for nodes in forest:
        tree_add(nodes, X, out)
    return out


class ProbitForest(BaseEstimator):
    """sklearn-style probit sum-of-trees sampler for binary targets.

    ``fit`` runs the chain and keeps one forest per retained iteration;
    predictions evaluate every retained forest, so their spread carries the
    posterior uncertainty.
    """

    def __init__(self, num_trees: int = 200, alpha: float = 0.95,
                 beta: float = 2.0, leaf_scale_k: float = 2.0,
                 iterations: int = 1100, burn_in: int = 100,
                 p_grow: float = 0.28, p_prune: float = 0.28,
                 p_change: float = 0.44, seed: int = 0):
        self.num_trees = num_trees
        self.alpha = alpha
        self.beta = beta
        self.leaf_scale_k = leaf_scale_k
        self.iterations = iterations
        self.burn_in = burn_in
        self.p_grow = p_grow
        self.p_prune = p_prune
        self.p_change = p_change
        self.seed = seed

    def _config(self) -> BartConfig:
        return BartConfig(self.num_trees, self.alpha, self.beta,
                          self.leaf_scale_k, self.iterations, self.burn_in,
                          self.p_grow, self.p_prune, self.p_change)

    def fit(self, X, y):
        X = as_matrix(X)
        y = as_binary_vector(y, length=X.shape[0])
        if X.shape[0] < 2:
            raise ParameterError("need at least 2 rows")
        sampler = _Sampler(X, y, self._config(), self.seed)
        self.forests_ = sampler.run()
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X) -> np.ndarray:
        X = as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ParameterError(
                f"X has {X.shape[1]} columns, model was fit on {self.n_features_in_}"
            )
        return X

    def latent_draws(self, X) -> np.ndarray:
        X = self._check(X)
        out = np.empty((len(self.forests_), X.shape[0]))
        for d, forest in enumerate(self.forests_):
            out[d] = forest_latent(forest, X)
        return out

    def predict_proba_draws(self, X) -> np.ndarray:
        return np.clip(ndtr(self.latent_draws(X)), _PROB_CLIP, 1 - _PROB_CLIP)

    def predict_proba(self, X) -> np.ndarray:
        return self.predict_proba_draws(X).mean(axis=0)
