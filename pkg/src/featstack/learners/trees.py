"""CART regression trees, bagged ensembles and squared-error gradient boosting."""

import math
from dataclasses import dataclass

import numpy as np

LEAF = -1


@dataclass(frozen=True)
class Tree:
    """Array-encoded binary tree; ``feature == LEAF`` marks a leaf.

    Rows with ``x[feature] <= threshold`` go to ``left``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def n_leaves(self):
        return int(np.sum(self.feature == LEAF))

    def predict(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] != LEAF
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] != LEAF
        return self.value[node].copy()

    def to_dict(self):
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["feature"], dtype=np.int64),
                   np.array(d["threshold"], dtype=np.float64),
                   np.array(d["left"], dtype=np.int64),
                   np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], dtype=np.float64))


def _best_split(X, y, features, min_leaf):
    """Best (gain, feature, threshold) over ``features`` scanned in ascending order.

    Gain is the reduction in the sum of squared errors.  Strict improvement is
    required to replace the incumbent, so ties keep the lowest feature index and,
    within a feature, the lowest threshold.
    """
    n = len(y)
    yc = y - y.mean()
    best = (0.0, LEAF, 0.0)
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cs = np.cumsum(yc[order])
        n_left = np.arange(1, n)
        # split between position i-1 and i, i.e. left holds n_left rows
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        s_left = cs[:-1]
        s_total = cs[-1]
        gain = s_left ** 2 / n_left + (s_total - s_left) ** 2 / (n - n_left) - s_total ** 2 / n
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best[0]:
            best = (float(gain[i]), int(f), 0.5 * (xs[i] + xs[i + 1]))
    return best


def fit_tree(data, max_depth=None, min_leaf=5, feature_subset=None, rng=None):
    """Greedy CART regression tree using variance-reduction splits.

    ``feature_subset`` features are drawn afresh (without replacement) at each
    node when it is smaller than the feature count; leaves predict the mean
    target of their rows.
    """
    return _grow(data.features, data.target, max_depth, min_leaf, feature_subset, rng)


def _grow(X, y, max_depth, min_leaf, feature_subset, rng):
    n, d = X.shape
    if feature_subset is not None and feature_subset < d and rng is None:
        rng = np.random.default_rng(0)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y[rows].mean()))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if max_depth is not None and depth >= max_depth:
            continue
        if len(rows) < 2 * min_leaf:
            continue
        if feature_subset is not None and feature_subset < d:
            cand = np.sort(rng.choice(d, size=feature_subset, replace=False))
        else:
            cand = range(d)
        gain, f, thr = _best_split(X[rows], y[rows], cand, min_leaf)
        if f == LEAF or gain <= 1e-12 * max(1.0, float(np.sum((y[rows] - y[rows].mean()) ** 2))):
            continue
        go_left = X[rows, f] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        # right pushed first so the left subtree gets the lower node ids
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value))


@dataclass(frozen=True)
class Ensemble:
    trees: tuple

    def member_predictions(self, X):
        return np.stack([t.predict(X) for t in self.trees], axis=1)

    def predict(self, X):
        return self.member_predictions(X).mean(axis=1)

    def to_dict(self):
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Tree.from_dict(t) for t in d["trees"]))


def fit_ensemble(data, kind, n_trees, max_depth=None, min_leaf=5, rng=None,
                 bootstrap=True, max_features=None):
    """Bagging or random forest: ``n_trees`` trees on bootstrap resamples.

    Random forests additionally draw ``max_features`` candidate features per
    split, ``ceil(d / 3)`` by default.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be at least 1")
    rng = np.random.default_rng(0) if rng is None else rng
    X, y = data.features, data.target
    n, d = X.shape
    if kind == "random_forest":
        subset = max_features if max_features is not None else max(1, math.ceil(d / 3))
    elif kind == "bagging":
        subset = None
    else:
        raise ValueError(f"unknown ensemble kind {kind!r}")
    trees = []
    for _ in range(n_trees):
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(_grow(X[rows], y[rows], max_depth, min_leaf, subset, rng))
    return Ensemble(tuple(trees))


@dataclass(frozen=True)
class BoostedTrees:
    init: float
    shrinkage: float
    trees: tuple

    def staged_predict(self, X):
        """Yield predictions after 0, 1, ..., n_rounds stages."""
        F = np.full(X.shape[0], self.init)
        yield F.copy()
        for t in self.trees:
            F = F + self.shrinkage * t.predict(X)
            yield F.copy()

    def predict(self, X):
        F = np.full(X.shape[0], self.init)
        for t in self.trees:
            F = F + self.shrinkage * t.predict(X)
        return F

    def to_dict(self):
        return {"init": self.init, "shrinkage": self.shrinkage,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["init"]), float(d["shrinkage"]),
                   tuple(Tree.from_dict(t) for t in d["trees"]))


def fit_gradient_boosting(data, n_rounds=100, shrinkage=0.1, max_depth=3, min_leaf=1):
    """Stagewise squared-error boosting: ``F_m = F_{m-1} + shrinkage * tree_m``."""
    if n_rounds < 1:
        raise ValueError("n_rounds must be at least 1")
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError("shrinkage must lie in [0, 1]")
    X, y = data.features, data.target
    init = float(y.mean())
    F = np.full(len(y), init)
    trees = []
    for _ in range(n_rounds):
        tree = _grow(X, y - F, max_depth, min_leaf, None, None)
        F = F + shrinkage * tree.predict(X)
        trees.append(tree)
    return BoostedTrees(init, float(shrinkage), tuple(trees))
