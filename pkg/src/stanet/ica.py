"""Spatial group ICA over temporally concatenated subjects.

Rows are signals, voxels are samples: ``center_whiten`` reduces the
concatenated (subjects*T) x V matrix to ``n_components`` white rows,
``fastica`` finds the rotation that makes them maximally non-Gaussian, and
dual regression maps the group spatial maps back to each subject.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matdir

TOL = 1e-6
MAX_ITER = 500
RESTARTS = 5
_RANK_RTOL = 1e-10


class RankError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, delta: float, best_rotation=None):
        super().__init__(message)
        self.delta = delta
        self.best_rotation = best_rotation


@dataclass
class Whitening:
    transform: np.ndarray  # K x M
    mean: np.ndarray  # M, per-row mean over voxels

    def apply(self, data: np.ndarray) -> np.ndarray:
        return self.transform @ (data - self.mean[:, None])


def center_whiten(data: np.ndarray, n_components: int):
    """Return ``(whitened, transform, mean)`` with ``whitened @ whitened.T / V == I``.

    Raises RankError when the centred data has rank below ``n_components``.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("center_whiten needs a matrix with at least 2 rows")
    if not np.all(np.isfinite(data)):
        raise ValueError("center_whiten: non-finite entries")
    M, V = data.shape
    if n_components < 1 or n_components > min(M, V):
        raise RankError(f"n_components={n_components} outside [1, {min(M, V)}]")
    mean = data.mean(axis=1)
    centred = data - mean[:, None]
    U, s, Vt = np.linalg.svd(centred, full_matrices=False)
    tol = _RANK_RTOL * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if rank < n_components:
        raise RankError(f"data has rank {rank}, fewer than the {n_components} requested components")
    k = n_components
    scale = np.sqrt(V) / s[:k]
    transform = scale[:, None] * U[:, :k].T
    whitened = np.sqrt(V) * Vt[:k]
    return whitened, transform, mean


def _sym_decorrelate(W: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(W @ W.T)
    return (vecs * (1.0 / np.sqrt(vals))) @ vecs.T @ W


def _iterate(Z, W, tol, max_iter):
    V = Z.shape[1]
    delta = np.inf
    for _ in range(max_iter):
        G = np.tanh(W @ Z)
        g_prime = 1.0 - G**2
        W_new = _sym_decorrelate(G @ Z.T / V - g_prime.mean(axis=1)[:, None] * W)
        # rows may flip sign between sweeps; compare sign-aligned
        signs = np.sign(np.sum(W_new * W, axis=1))
        signs[signs == 0] = 1.0
        delta = float(np.max(np.abs(W_new - signs[:, None] * W)))
        W = W_new
        if delta < tol:
            return W, delta, True
    return W, delta, False


def fastica(whitened: np.ndarray, seed: int = 0, tol: float = TOL, max_iter: int = MAX_ITER,
            restarts: int = RESTARTS) -> np.ndarray:
    """Symmetric fixed-point ICA with a tanh contrast.

    Returns an orthogonal K x K rotation ``W``; components are ``W @ whitened``.
    Up to ``restarts`` random initialisations are tried; if none converges a
    ConvergenceError is raised carrying the smallest final delta and the
    rotation that produced it.
    """
    Z = np.asarray(whitened, dtype=np.float64)
    K = Z.shape[0]
    rng = np.random.default_rng(seed)
    best, best_W = np.inf, None
    for _ in range(max(1, restarts)):
        W0 = _sym_decorrelate(rng.standard_normal((K, K)))
        W, delta, ok = _iterate(Z, W0, tol, max_iter)
        if ok:
            return W
        if delta < best:
            best, best_W = delta, W
    raise ConvergenceError(
        f"fastica did not converge after {restarts} restarts (delta={best:.3g})", best, best_W
    )


@dataclass
class GroupDecomposition:
    n_components: int
    spatial_maps: np.ndarray  # N x V, unit-variance rows
    unmixing: np.ndarray  # N x (subjects*T): rotation @ whitening transform
    timecourses: list = field(default_factory=list)  # per subject T x N
    subject_maps: list = field(default_factory=list)  # per subject N x V
    whitening: Whitening | None = None
    explained_variance: np.ndarray | None = None
    subject_ids: list = field(default_factory=list)
    converged: bool = True
    final_delta: float = 0.0

    def save(self, path) -> Path:
        mats = {
            "spatial_maps": self.spatial_maps,
            "unmixing": self.unmixing,
            "whitening_transform": self.whitening.transform,
            "whitening_mean": self.whitening.mean,
            "explained_variance": self.explained_variance,
        }
        for sid, tc, sm in zip(self.subject_ids, self.timecourses, self.subject_maps):
            mats[f"tc_{sid}"] = tc
            mats[f"map_{sid}"] = sm
        header = {"kind": "decomposition", "n_components": self.n_components,
                  "subject_ids": list(self.subject_ids), "converged": self.converged,
                  "final_delta": self.final_delta}
        return matdir.write_dir(path, header, mats)

    @classmethod
    def load(cls, path) -> "GroupDecomposition":
        header, m = matdir.read_dir(path)
        if header.get("kind") != "decomposition":
            raise matdir.FormatError(f"{path}: not a decomposition directory")
        ids = header["subject_ids"]
        return cls(
            n_components=header["n_components"],
            spatial_maps=m["spatial_maps"],
            unmixing=m["unmixing"],
            timecourses=[m[f"tc_{s}"] for s in ids],
            subject_maps=[m[f"map_{s}"] for s in ids],
            whitening=Whitening(m["whitening_transform"], m["whitening_mean"]),
            explained_variance=m["explained_variance"],
            subject_ids=ids,
            converged=header.get("converged", True),
            final_delta=header.get("final_delta", 0.0),
        )


def regress_timecourses(X: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """Least-squares A minimising ||Xc - A maps||, Xc = X with row means removed."""
    Xc = X - X.mean(axis=1, keepdims=True)
    coef, *_ = np.linalg.lstsq(maps.T, Xc.T, rcond=None)
    return coef.T


def regress_maps(X: np.ndarray, timecourses: np.ndarray) -> np.ndarray:
    """Second dual-regression stage: subject-specific maps from subject time courses."""
    Xc = X - X.mean(axis=1, keepdims=True)
    coef, *_ = np.linalg.lstsq(timecourses, Xc, rcond=None)
    return coef


def group_decompose(cohort, n_components: int, seed: int = 0,
                    allow_unconverged: bool = False) -> GroupDecomposition:
    """Group ICA of ``cohort`` (list of SubjectScan) with dual-regression back-projection.

    With ``allow_unconverged`` a failed fastica falls back to the best of its
    restarts (lowest final delta) and the result is flagged
    ``converged=False``; otherwise the ConvergenceError propagates. Orders
    above the number of non-Gaussian sources usually need the fallback,
    since rotations inside a Gaussian subspace never settle.
    """
    if not cohort:
        raise ValueError("empty cohort")
    shape = cohort[0].data.shape
    for scan in cohort:
        if scan.data.shape != shape:
            raise ValueError(
                f"{scan.subject_id}: shape {scan.data.shape} differs from {shape}"
            )
    stacked = np.vstack([s.data for s in cohort])
    whitened, transform, mean = center_whiten(stacked, n_components)
    converged, final_delta = True, 0.0
    try:
        rotation = fastica(whitened, seed=seed)
    except ConvergenceError as err:
        if not allow_unconverged:
            raise
        rotation, converged, final_delta = err.best_rotation, False, err.delta
    Y = rotation @ whitened
    unmixing = rotation @ transform

    # sign: largest-magnitude voxel positive
    peak = Y[np.arange(n_components), np.argmax(np.abs(Y), axis=1)]
    signs = np.where(peak < 0, -1.0, 1.0)
    Y = Y * signs[:, None]
    unmixing = unmixing * signs[:, None]

    tcs = [regress_timecourses(s.data, Y) for s in cohort]
    explained = np.sum(np.vstack(tcs) ** 2, axis=0)
    order = np.argsort(-explained, kind="stable")
    Y = Y[order]
    unmixing = unmixing[order]
    tcs = [tc[:, order] for tc in tcs]
    maps = [regress_maps(s.data, tc) for s, tc in zip(cohort, tcs)]
    return GroupDecomposition(
        n_components=n_components,
        spatial_maps=Y,
        unmixing=unmixing,
        timecourses=tcs,
        subject_maps=maps,
        whitening=Whitening(transform, mean),
        explained_variance=explained[order],
        subject_ids=[s.subject_id for s in cohort],
        converged=converged,
        final_delta=float(final_delta),
    )


def matched_abs_correlation(estimated: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-true-source |corr| after optimal one-to-one matching (Hungarian)."""
    from scipy.optimize import linear_sum_assignment

    n = truth.shape[0]
    C = np.abs(np.corrcoef(truth, estimated)[:n, n:])
    rows, cols = linear_sum_assignment(-C)
    return C[rows, cols]
