"""Confusion counts and the classification metrics reported per fold."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


class AucUndefinedError(ValueError):
    """AUC needs at least one positive and one negative label."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    sen: float
    ppv: float
    f1: float
    recall: float
    auc: float | None
    ppv_undefined: bool = False
    sen_undefined: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if s.size == 0:
        raise ValueError("no samples")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return s, y.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Counts with a sample predicted positive iff its score is >= threshold."""
    s, y = _check(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(positive outscores negative), ties count one half."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise AucUndefinedError("AUC is undefined with a single class present")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def metrics(c: ConfusionCounts, scores, labels, allow_undefined_auc: bool = False) -> MetricsReport:
    """ACC, SEN (= recall), PPV, F1 and AUC for one evaluated set.

    PPV with no positive predictions (and SEN with no positive labels) is
    reported as 0 with a flag, so F1 falls to 0 instead of raising.
    """
    s, y = _check(scores, labels)
    if c.total != y.size:
        raise ValueError(f"confusion counts cover {c.total} samples, got {y.size}")
    acc = (c.tp + c.tn) / c.total
    sen_undef = c.tp + c.fn == 0
    ppv_undef = c.tp + c.fp == 0
    sen = 0.0 if sen_undef else c.tp / (c.tp + c.fn)
    ppv = 0.0 if ppv_undef else c.tp / (c.tp + c.fp)
    f1 = 0.0 if sen + ppv == 0 else 2 * sen * ppv / (sen + ppv)
    try:
        a = auc(s, y)
    except AucUndefinedError:
        if not allow_undefined_auc:
            raise
        a = None
    return MetricsReport(acc=acc, sen=sen, ppv=ppv, f1=f1, recall=sen, auc=a,
                         ppv_undefined=ppv_undef, sen_undefined=sen_undef)
