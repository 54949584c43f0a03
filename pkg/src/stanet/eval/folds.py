"""Subject-level k-fold plans."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple  # k tuples of subject ids
    seed: int
    stratified: bool

    @property
    def k(self) -> int:
        return len(self.folds)

    def split(self, i: int, subject_ids) -> tuple:
        """Index arrays (train, test) into ``subject_ids`` for fold ``i``."""
        test = set(self.folds[i])
        mask = np.array([s in test for s in subject_ids])
        return np.flatnonzero(~mask), np.flatnonzero(mask)

    def to_dict(self) -> dict:
        return {"folds": [list(f) for f in self.folds], "seed": self.seed, "stratified": self.stratified}


def make_folds(subject_ids, labels, k: int = 10, seed: int = 0, stratified: bool = True) -> FoldPlan:
    """Seeded partition of subjects into ``k`` folds.

    Stratified mode shuffles each class, lays the classes end to end and
    deals positions round-robin, so per-class counts across folds differ by
    at most one and fold sizes by at most one.
    """
    ids = list(subject_ids)
    y = np.asarray(labels).ravel()
    n = len(ids)
    if y.shape != (n,):
        raise ValueError(f"{n} subjects but {y.size} labels")
    if len(set(ids)) != n:
        raise ValueError("subject ids must be unique")
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} subjects")
    rng = np.random.default_rng(seed)
    if stratified:
        small = [c for c in (1, 0) if 0 < np.sum(y == c) < k]
        if small:
            warnings.warn(f"class {small[0]} has fewer than k={k} subjects; some folds will lack it")
        order = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in (1, 0)])
    else:
        order = rng.permutation(n)
    assign = np.empty(n, dtype=np.int64)
    assign[order] = np.arange(n) % k
    folds = tuple(tuple(ids[i] for i in np.flatnonzero(assign == f)) for f in range(k))
    return FoldPlan(folds, seed, stratified)
