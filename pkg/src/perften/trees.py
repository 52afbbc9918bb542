"""Gradient-boosted regression trees with squared-error loss.

Two growth policies: ``level_wise`` expands every node up to ``max_depth``
(XGBoost style); ``leaf_wise`` repeatedly splits the leaf whose best split has
the largest gain until ``max_leaves`` is reached (LightGBM style).

Split gain for a node with residual sum ``G`` over ``n`` rows and L2 leaf
penalty ``lam`` is ``G_L**2/(n_L+lam) + G_R**2/(n_R+lam) - G**2/(n+lam)``; a
leaf predicts ``G/(n+lam)``. With ``lam = 0`` the gain is the reduction in
squared error.
"""

import heapq
import json
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np

from .errors import DataError, DimensionError, EmptyDataError

FORMAT_VERSION = 1
GROWTH_POLICIES = ("level_wise", "leaf_wise")


@dataclass(frozen=True)
class BoostConfig:
    growth: str = "level_wise"
    learning_rate: float = 0.1
    n_trees: int = 100
    max_depth: int = 10
    max_leaves: int = 100
    l2_leaf_penalty: float = 1.0
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.growth not in GROWTH_POLICIES:
            raise ValueError(f"growth must be one of {GROWTH_POLICIES}, got {self.growth!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.n_trees < 0 or self.max_depth < 1 or self.max_leaves < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_trees >= 0 and max_depth, max_leaves, min_samples_leaf >= 1 required")
        if self.l2_leaf_penalty < 0:
            raise ValueError("l2_leaf_penalty must be non-negative")


XGB_STYLE = BoostConfig(growth="level_wise", max_depth=10, n_trees=100, learning_rate=0.1)
LGBM_STYLE = BoostConfig(growth="leaf_wise", max_leaves=100, n_trees=100, learning_rate=0.1)


@dataclass
class Tree:
    """Flat binary tree. Leaves have ``feature == -1``."""

    feature: List[int] = field(default_factory=list)
    threshold: List[float] = field(default_factory=list)
    left: List[int] = field(default_factory=list)
    right: List[int] = field(default_factory=list)
    value: List[float] = field(default_factory=list)
    depth: List[int] = field(default_factory=list)

    def add_leaf(self, value, depth):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        self.depth.append(depth)
        return len(self.value) - 1

    @property
    def n_leaves(self):
        return sum(1 for f in self.feature if f < 0)

    @property
    def max_depth(self):
        return max(self.depth) if self.depth else 0

    def predict(self, X):
        node = np.zeros(X.shape[0], dtype=int)
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        active = feature[node] >= 0
        while active.any():
            rows = np.nonzero(active)[0]
            nd = node[rows]
            go_left = X[rows, feature[nd]] <= threshold[nd]
            node[rows] = np.where(go_left, left[nd], right[nd])
            active = feature[node] >= 0
        return np.asarray(self.value)[node]


@dataclass
class TreeEnsemble:
    config: BoostConfig
    base_score: float
    n_features: int
    trees: List[Tree] = field(default_factory=list)
    seed: int = 0

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "config": asdict(self.config),
            "base_score": self.base_score,
            "n_features": self.n_features,
            "seed": self.seed,
            "trees": [asdict(t) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported ensemble format version {d.get('version')!r}")
        return cls(BoostConfig(**d["config"]), float(d["base_score"]), int(d["n_features"]),
                   [Tree(**t) for t in d["trees"]], int(d.get("seed", 0)))

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, s):
        return cls.from_dict(json.loads(s))


def _best_split(X, r, lam, min_leaf):
    """Exact greedy search over every feature of the rows in a node.

    Returns ``(gain, feature, threshold, left_mask)`` or ``None``. Ties go to
    the lowest feature index, then the lowest threshold.
    """
    n, p = X.shape
    if n < 2 * min_leaf:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    cs = np.cumsum(r[order], axis=0)
    total = cs[-1, 0]
    n_left = np.arange(1, n)[:, None].astype(float)
    gl = cs[:-1]
    gr = total - gl
    parent = total * total / (n + lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = gl * gl / (n_left + lam) + gr * gr / (n - n_left + lam) - parent
    valid = xs[1:] > xs[:-1]
    if min_leaf > 1:
        pos = np.arange(1, n)
        valid &= ((pos >= min_leaf) & (pos <= n - min_leaf))[:, None]
    gain = np.where(valid, gain, -np.inf)
    # feature-major flattening: first maximum is lowest feature, then lowest threshold
    flat = gain.T.ravel()
    k = int(np.argmax(flat))
    best = flat[k]
    # gains this small relative to the node's squared residual are rounding noise
    if not np.isfinite(best) or best <= 1e-12 * float(np.dot(r, r)):
        return None
    f, i = divmod(k, n - 1)
    thr = (xs[i, f] + xs[i + 1, f]) / 2.0
    return float(best), f, float(thr), X[:, f] <= thr


def _leaf_value(r, lam):
    return float(r.sum() / (r.size + lam))


def _grow_level_wise(X, r, cfg):
    tree = Tree()
    lam = cfg.l2_leaf_penalty
    root = tree.add_leaf(_leaf_value(r, lam), 0)
    frontier = [(root, np.arange(X.shape[0]))]
    for depth in range(cfg.max_depth):
        nxt = []
        for node, rows in frontier:
            split = _best_split(X[rows], r[rows], lam, cfg.min_samples_leaf)
            if split is None:
                continue
            _, f, thr, go_left = split
            lrows, rrows = rows[go_left], rows[~go_left]
            tree.feature[node] = f
            tree.threshold[node] = thr
            tree.left[node] = tree.add_leaf(_leaf_value(r[lrows], lam), depth + 1)
            tree.right[node] = tree.add_leaf(_leaf_value(r[rrows], lam), depth + 1)
            nxt.append((tree.left[node], lrows))
            nxt.append((tree.right[node], rrows))
        if not nxt:
            break
        frontier = nxt
    return tree


def _grow_leaf_wise(X, r, cfg):
    tree = Tree()
    lam = cfg.l2_leaf_penalty
    heap = []

    def push(node, rows):
        split = _best_split(X[rows], r[rows], lam, cfg.min_samples_leaf)
        if split is not None:
            # node id breaks gain ties: earlier-created leaves first
            heapq.heappush(heap, (-split[0], node, rows, split))

    root = tree.add_leaf(_leaf_value(r, lam), 0)
    push(root, np.arange(X.shape[0]))
    leaves = 1
    while heap and leaves < cfg.max_leaves:
        _, node, rows, (_, f, thr, go_left) = heapq.heappop(heap)
        lrows, rrows = rows[go_left], rows[~go_left]
        d = tree.depth[node] + 1
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = tree.add_leaf(_leaf_value(r[lrows], lam), d)
        tree.right[node] = tree.add_leaf(_leaf_value(r[rrows], lam), d)
        leaves += 1
        push(tree.left[node], lrows)
        push(tree.right[node], rrows)
    return tree


def _check_X(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionError("feature matrix must be 2-D")
    return X


def fit_gbdt(X, y, cfg=BoostConfig(), seed=0, callback=None):
    """Stagewise least-squares boosting.

    Training has no random component (no row or column subsampling); ``seed``
    is recorded on the ensemble for provenance. ``callback(k, predictions)``
    is invoked after every round, with ``k = 0`` for the base score.
    """
    X = _check_X(X)
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0 or X.shape[0] == 0:
        raise EmptyDataError("empty training set")
    if X.shape[0] != y.size:
        raise DimensionError(f"{X.shape[0]} feature rows but {y.size} targets")
    if not np.all(np.isfinite(y)):
        raise DataError("targets contain NaN or infinite values")
    if not np.all(np.isfinite(X)):
        raise DataError("features contain NaN or infinite values")
    base = float(np.mean(y))
    ens = TreeEnsemble(cfg, base, X.shape[1], [], int(seed))
    pred = np.full(y.size, base)
    if callback:
        callback(0, pred)
    grow = _grow_level_wise if cfg.growth == "level_wise" else _grow_leaf_wise
    for k in range(cfg.n_trees):
        tree = grow(X, y - pred, cfg)
        ens.trees.append(tree)
        pred = pred + cfg.learning_rate * tree.predict(X)
        if callback:
            callback(k + 1, pred)
    return ens


def predict_gbdt(ensemble, X):
    X = _check_X(X)
    if X.shape[1] != ensemble.n_features:
        raise DimensionError(f"expected {ensemble.n_features} features, got {X.shape[1]}")
    total = np.zeros(X.shape[0])
    for tree in ensemble.trees:
        total += tree.predict(X)
    return ensemble.base_score + ensemble.config.learning_rate * total
