"""Training-set class balancing: random oversampling and the SMOTE family.

Every synthetic sample is ``x_i + u * (x_j - x_i)`` for two original rows
``i``, ``j`` (a plain copy when ``u == 0``). ``balance`` records that
provenance alongside the features so a caller whose features are
re-computed later (co-trained convolution) can rebuild the same
interpolations from the fresh rows.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

STRATEGIES = ("random", "smote", "adasyn", "borderline", "smote_tomek", "svm_smote")
SVM_STEPS = 200


class LeakageError(RuntimeError):
    """Raised when balancing is attempted on held-out data."""


@dataclass
class LabeledSet:
    features: np.ndarray  # n x d
    labels: np.ndarray  # n, values in {0, 1}
    role: str = "train"
    origin: np.ndarray | None = None  # n x 2 int: source rows (i, j) in the input set
    step: np.ndarray | None = None  # n: interpolation fraction u
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels).astype(np.int64).ravel()
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0/1")

    def __len__(self):
        return self.labels.shape[0]

    def counts(self) -> dict:
        return {0: int(np.sum(self.labels == 0)), 1: int(np.sum(self.labels == 1))}


@dataclass(frozen=True)
class SamplerConfig:
    strategy: str = "smote"
    k_neighbors: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"SamplerConfig.strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.k_neighbors < 1:
            raise ValueError("SamplerConfig.k_neighbors must be >= 1")


def knn(points, query_index: int, k: int, labels=None, restrict_to=None) -> np.ndarray:
    """Indices of the ``k`` nearest points to ``points[query_index]``.

    The query itself is excluded; with ``restrict_to`` only points whose
    label matches are eligible. Ties go to the lower index.
    """
    X = np.asarray(points, dtype=np.float64)
    eligible = np.arange(X.shape[0])
    if restrict_to is not None:
        eligible = eligible[np.asarray(labels)[eligible] == restrict_to]
    eligible = eligible[eligible != query_index]
    if k > eligible.size:
        raise ValueError(f"k={k} exceeds the {eligible.size} eligible neighbours")
    d = np.sum((X[eligible] - X[query_index]) ** 2, axis=1)
    return eligible[np.argsort(d, kind="stable")[:k]]


def danger_set(X, y, minority: int, k: int) -> np.ndarray:
    """Minority rows whose k all-class neighbourhood is majority-dominated, not all-majority."""
    out = []
    for i in np.flatnonzero(y == minority):
        m = int(np.sum(y[knn(X, i, k)] != minority))
        if k / 2 <= m < k:
            out.append(i)
    return np.array(out, dtype=np.int64)


def adasyn_ratios(X, y, minority: int, k: int) -> np.ndarray:
    """Fraction of majority rows among each minority row's k all-class neighbours."""
    return np.array([np.mean(y[knn(X, i, k)] != minority) for i in np.flatnonzero(y == minority)])


def allocate(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer counts proportional to ``weights`` summing to ``total`` (largest remainder)."""
    w = np.asarray(weights, dtype=np.float64)
    raw = w / w.sum() * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _fit_linear_svm(X, y, steps=SVM_STEPS, lam=1e-2):
    """Hinge-loss linear separator by subgradient descent on standardised features."""
    mu, sd = X.mean(axis=0), X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    s = np.where(y == 1, 1.0, -1.0)
    w = np.zeros(Z.shape[1])
    b = 0.0
    for t in range(1, steps + 1):
        eta = 1.0 / (lam * (t + 10))
        margin = s * (Z @ w + b)
        viol = margin < 1
        gw = lam * w - (s[viol, None] * Z[viol]).sum(axis=0) / len(s)
        gb = -s[viol].sum() / len(s)
        w -= eta * gw
        b -= eta * gb
    return lambda A: ((A - mu) / sd) @ w + b


def margin_set(X, y, minority: int) -> np.ndarray:
    """Minority rows on or inside the margin of a linear max-margin separator."""
    f = _fit_linear_svm(X, y)
    s = np.where(y == 1, 1.0, -1.0)
    idx = np.flatnonzero(y == minority)
    return idx[s[idx] * f(X[idx]) <= 1.0]


def tomek_links(X, y) -> np.ndarray:
    """Rows taking part in a Tomek link (mutual nearest neighbours of opposite class)."""
    n = X.shape[0]
    nn = np.array([knn(X, i, 1)[0] for i in range(n)])
    linked = [i for i in range(n) if nn[nn[i]] == i and y[i] != y[nn[i]]]
    return np.array(sorted(linked), dtype=np.int64)


def _smote_from(bases, X, y, minority, k, n_new, rng):
    """``n_new`` interpolations from rows drawn uniformly out of ``bases``."""
    neigh = {int(i): knn(X, int(i), k, labels=y, restrict_to=minority) for i in np.unique(bases)}
    base = bases[rng.integers(0, len(bases), size=n_new)] if n_new else np.empty(0, np.int64)
    return _interpolate(base, neigh, rng)


def _interpolate(base, neigh, rng):
    partner = np.array([neigh[int(i)][rng.integers(0, len(neigh[int(i)]))] for i in base], dtype=np.int64)
    u = rng.random(len(base))  # [0, 1)
    return np.column_stack([base, partner]).astype(np.int64).reshape(-1, 2), u


def balance(data: LabeledSet, cfg: SamplerConfig) -> LabeledSet:
    """Oversample the minority class of a training set up to the majority count.

    Originals come first and unchanged; synthetic rows follow with the
    minority label. ``smote_tomek`` additionally removes both members of
    every Tomek link afterwards, so its final counts can differ.
    """
    if data.role != "train":
        raise LeakageError(f"balance() called on a {data.role!r} partition")
    X, y = data.features, data.labels
    counts = data.counts()
    if counts[0] == 0 or counts[1] == 0:
        raise ValueError("balance() needs both classes present")
    minority = 0 if counts[0] < counts[1] else 1
    n_min, n_maj = counts[minority], counts[1 - minority]
    n_new = n_maj - n_min
    rng = np.random.default_rng(cfg.seed)
    info = {"strategy": cfg.strategy, "minority": minority, "k_requested": cfg.k_neighbors,
            "fallback": None, "selection": [], "removed": []}
    n = len(y)
    origin = np.column_stack([np.arange(n), np.arange(n)])
    step = np.zeros(n)

    k = min(cfg.k_neighbors, n_min - 1)
    info["k_used"] = k
    min_idx = np.flatnonzero(y == minority)
    strategy = cfg.strategy

    if n_new == 0:
        pairs, u = np.empty((0, 2), np.int64), np.empty(0)
    elif strategy == "random" or n_min == 1:
        if strategy != "random":
            info["fallback"] = "single minority sample: random duplication"
            warnings.warn(info["fallback"])
        base = min_idx[rng.integers(0, n_min, size=n_new)]
        pairs, u = np.column_stack([base, base]), np.zeros(n_new)
    else:
        k_all = min(cfg.k_neighbors, n - 1)
        info["k_all"] = k_all
        if strategy in ("smote", "smote_tomek"):
            pairs, u = _smote_from(min_idx, X, y, minority, k, n_new, rng)
        elif strategy == "adasyn":
            ratios = adasyn_ratios(X, y, minority, k_all)
            info["ratios"] = ratios.tolist()
            if ratios.sum() == 0:
                info["fallback"] = "no majority neighbours: uniform smote"
                per_point = allocate(np.ones(n_min), n_new)
            else:
                per_point = allocate(ratios, n_new)
            info["selection"] = min_idx[per_point > 0].tolist()
            info["allocation"] = per_point.tolist()
            neigh = {int(i): knn(X, int(i), k, labels=y, restrict_to=minority) for i in min_idx}
            base = np.repeat(min_idx, per_point)
            pairs, u = _interpolate(base, neigh, rng)
        elif strategy == "borderline":
            danger = danger_set(X, y, minority, k_all)
            info["selection"] = danger.tolist()
            if danger.size == 0:
                info["fallback"] = "empty danger set: smote over all minority rows"
                danger = min_idx
            pairs, u = _smote_from(danger, X, y, minority, k, n_new, rng)
        elif strategy == "svm_smote":
            support = margin_set(X, y, minority)
            info["selection"] = support.tolist()
            if support.size == 0:
                info["fallback"] = "no minority rows inside the margin: smote over all minority rows"
                support = min_idx
            pairs, u = _smote_from(support, X, y, minority, k, n_new, rng)
        else:  # pragma: no cover - guarded by SamplerConfig
            raise ValueError(strategy)

    origin = np.vstack([origin, pairs]).astype(np.int64)
    step = np.concatenate([step, u])
    feats = X[origin[:, 0]] + step[:, None] * (X[origin[:, 1]] - X[origin[:, 0]])
    feats[:n] = X  # originals verbatim
    labels = np.concatenate([y, np.full(len(u), minority)])

    if strategy == "smote_tomek" and n_new > 0:
        drop = tomek_links(feats, labels)
        keep = np.setdiff1d(np.arange(len(labels)), drop)
        info["removed"] = drop.tolist()
        feats, labels, origin, step = feats[keep], labels[keep], origin[keep], step[keep]

    out = LabeledSet(feats, labels, role="train", origin=origin, step=step, info=info)
    out.info["counts"] = out.counts()
    return out


def mixing_matrix(origin: np.ndarray, step: np.ndarray, n_rows: int) -> np.ndarray:
    """Dense (len(origin) x n_rows) matrix with ``1-u`` at column i and ``u`` at column j."""
    M = np.zeros((len(origin), n_rows))
    r = np.arange(len(origin))
    np.add.at(M, (r, origin[:, 0]), 1.0 - step)
    np.add.at(M, (r, origin[:, 1]), step)
    return M


def rebuild(rows, origin: np.ndarray, step: np.ndarray):
    """Apply a recorded balancing recipe to freshly computed rows (array or Tensor)."""
    from .autograd import Tensor, make

    if isinstance(rows, Tensor):
        n = rows.shape[0]
        M = mixing_matrix(origin, step, n).astype(rows.data.dtype)
        flat = rows.data.reshape(n, -1)
        out_shape = (len(origin),) + rows.shape[1:]
        return make((M @ flat).reshape(out_shape), (rows,),
                    lambda g: ((M.T @ g.reshape(len(origin), -1)).reshape(rows.shape),))
    rows = np.asarray(rows)
    a, b = rows[origin[:, 0]], rows[origin[:, 1]]
    return a + (b - a) * step.reshape((-1,) + (1,) * (rows.ndim - 1))


def as_test(data: LabeledSet) -> LabeledSet:
    """A read-only held-out view: its features are frozen and balance() refuses it."""
    feats = data.features.copy()
    feats.setflags(write=False)
    return replace(data, features=feats, role="test")
