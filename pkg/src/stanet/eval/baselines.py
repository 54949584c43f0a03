"""Reference classifiers on flattened features: logistic regression and a CART tree."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autograd import sigmoid_array

BASELINES = ("logistic", "tree", "plain_gru", "constant")


class DegenerateTrainError(ValueError):
    """Raised when a training set holds a single class."""


def _check_train(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y).astype(np.int64).ravel()
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} rows but {y.size} labels")
    if np.unique(y).size < 2:
        raise DegenerateTrainError("training set has a single class")
    return X, y


@dataclass
class Logistic:
    mean: np.ndarray
    scale: np.ndarray
    w: np.ndarray
    b: float

    def predict_proba(self, X) -> np.ndarray:
        Z = (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.mean) / self.scale
        return sigmoid_array(Z @ self.w + self.b)


def fit_logistic(X, y, steps: int = 500, lr: float = 0.1) -> Logistic:
    """Full-batch gradient descent on the mean log-loss of standardised features.

    The intercept starts at the logit of the class prior, so constant
    features leave the prediction at the prior.
    """
    X, y = _check_train(X, y)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    p = y.mean()
    w = np.zeros(Z.shape[1])
    b = float(np.log(p / (1 - p)))
    n = y.size
    for _ in range(steps):
        err = sigmoid_array(Z @ w + b) - y
        w -= lr * (Z.T @ err) / n
        b -= lr * err.mean()
    return Logistic(mean, scale, w, b)


@dataclass
class Node:
    prob: float
    n: int
    feature: int = -1
    threshold: float = 0.0
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth(), self.right.depth())


def gini(y) -> float:
    y = np.asarray(y)
    if y.size == 0:
        return 0.0
    p = y.mean()
    return float(2 * p * (1 - p))


def best_split(X, y):
    """(feature, threshold, weighted child impurity) of the best binary split, or None.

    Thresholds are midpoints between consecutive distinct sorted values;
    ties on impurity go to the lower feature index, then the lower threshold.
    """
    n, d = X.shape
    best = None
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        valid = np.flatnonzero(xs[1:] > xs[:-1])  # split after position i
        if valid.size == 0:
            continue
        left_pos = np.cumsum(ys)[valid]
        left_n = valid + 1
        right_pos = ys.sum() - left_pos
        right_n = n - left_n
        pl, pr = left_pos / left_n, right_pos / right_n
        imp = (left_n * 2 * pl * (1 - pl) + right_n * 2 * pr * (1 - pr)) / n
        j = int(np.argmin(imp))
        if best is None or imp[j] < best[2]:
            thr = (xs[valid[j]] + xs[valid[j] + 1]) / 2
            best = (f, float(thr), float(imp[j]))
    return best


def fit_tree(X, y, max_depth: int = 6, min_samples_split: int = 2) -> Node:
    """CART with Gini impurity; a split is kept only if it lowers impurity."""
    X, y = _check_train(X, y)
    return _grow(X, y, max_depth, min_samples_split)


def _grow(X, y, depth_left, min_split) -> Node:
    node = Node(prob=float(y.mean()), n=int(y.size))
    if depth_left == 0 or y.size < min_split or gini(y) == 0.0:
        return node
    split = best_split(X, y)
    if split is None or split[2] >= gini(y) - 1e-15:
        return node
    f, thr, _ = split
    go_left = X[:, f] <= thr
    node.feature, node.threshold = f, thr
    node.left = _grow(X[go_left], y[go_left], depth_left - 1, min_split)
    node.right = _grow(X[~go_left], y[~go_left], depth_left - 1, min_split)
    return node


def predict_tree(node: Node, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.empty(X.shape[0])
    for i, x in enumerate(X):
        cur = node
        while not cur.is_leaf:
            cur = cur.left if x[cur.feature] <= cur.threshold else cur.right
        out[i] = cur.prob
    return out


def baseline_fit_predict(kind: str, train, test) -> np.ndarray:
    """Scores for ``test`` from a baseline fitted on ``train`` (both LabeledSet-like).

    ``plain_gru`` needs the STFA inputs and is dispatched by the harness.
    """
    if kind == "logistic":
        return fit_logistic(train.features, train.labels).predict_proba(test.features)
    if kind == "tree":
        return predict_tree(fit_tree(train.features, train.labels), test.features)
    if kind == "constant":
        _check_train(train.features, train.labels)
        return np.full(len(test.labels), 0.5)
    if kind == "plain_gru":
        raise ValueError("plain_gru runs through the recurrent training path, not on flat features")
    raise ValueError(f"unknown baseline {kind!r}; choose from {BASELINES}")
