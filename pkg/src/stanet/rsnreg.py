"""IC maps against a resting-state-network template, plus the FC-matrix path."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.ndimage import convolve1d

from . import matdir
from .synthgen import grid_side

_COLLINEAR_RTOL = 1e-10


class CollinearTemplateError(ValueError):
    pass


class DegenerateSignalError(ValueError):
    pass


@dataclass
class RsnTemplate:
    maps: np.ndarray  # R x V
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.maps = np.atleast_2d(np.asarray(self.maps, dtype=np.float64))
        if not self.names:
            self.names = [f"rsn{i + 1:02d}" for i in range(self.maps.shape[0])]
        if len(self.names) != self.maps.shape[0]:
            raise ValueError("one name per template row required")
        _check_independent(self.maps)

    @property
    def n_regions(self) -> int:
        return self.maps.shape[0]

    def save(self, path) -> Path:
        return matdir.write_dir(path, {"kind": "template", "names": self.names}, {"maps": self.maps})

    @classmethod
    def load(cls, path) -> "RsnTemplate":
        header, mats = matdir.read_dir(path)
        if header.get("kind") != "template":
            raise matdir.FormatError(f"{path}: not a template directory")
        return cls(mats["maps"], list(header["names"]))


def _qr_of(maps: np.ndarray):
    q, r = np.linalg.qr(maps.T)  # V x R, R x R
    d = np.abs(np.diag(r))
    if d.size == 0 or d.min() <= _COLLINEAR_RTOL * d.max():
        raise CollinearTemplateError("template rows are (numerically) collinear")
    return q, r


def _check_independent(maps: np.ndarray) -> None:
    if maps.shape[0] > maps.shape[1]:
        raise CollinearTemplateError(f"{maps.shape[0]} template rows cannot be independent in {maps.shape[1]} voxels")
    _qr_of(maps)


def spatial_regression(Y: np.ndarray, template: RsnTemplate) -> np.ndarray:
    """OLS coefficients of each IC map on the template maps: ``Q = Y M^T (M M^T)^-1``.

    Solved through a QR factorisation of ``M^T`` rather than the explicit
    inverse. Returns the N x R spatial similarity matrix.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    M = template.maps
    if Y.shape[1] != M.shape[1]:
        raise ValueError(f"IC maps have {Y.shape[1]} voxels, template has {M.shape[1]}")
    q, r = _qr_of(M)
    return solve_triangular(r, q.T @ Y.T).T


def synth_template(n_regions: int, voxels: int, seed: int = 0, identity: bool = False) -> RsnTemplate:
    """Smooth, mutually orthogonal stand-in maps (deterministic in ``seed``)."""
    if n_regions > voxels:
        raise ValueError(f"synth_template: n_regions={n_regions} exceeds voxels={voxels}")
    if n_regions < 1:
        raise ValueError("synth_template: n_regions must be >= 1")
    if identity:
        return RsnTemplate(np.eye(n_regions, voxels))
    rng = np.random.default_rng(seed)
    side = grid_side(voxels)
    kernel = np.hanning(9)[1:-1]
    kernel /= kernel.sum()
    fields = []
    for _ in range(n_regions):
        f = rng.standard_normal((side, side))
        f = convolve1d(convolve1d(f, kernel, axis=0, mode="wrap"), kernel, axis=1, mode="wrap")
        fields.append(f.ravel()[:voxels])
    F = np.array(fields)
    F -= F.mean(axis=1, keepdims=True)
    # Loewdin orthogonalisation: the orthonormal set closest to the smooth fields
    vals, vecs = np.linalg.eigh(F @ F.T)
    F = (vecs / np.sqrt(vals)) @ vecs.T @ F
    return RsnTemplate(F * np.sqrt(voxels))


def fc_matrix(region_timecourses: np.ndarray) -> np.ndarray:
    """Pearson correlation between the columns of a T x P matrix."""
    X = np.asarray(region_timecourses, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise ValueError("fc_matrix needs a T x P matrix with T >= 3")
    Xc = X - X.mean(axis=0)
    norms = np.sqrt(np.sum(Xc**2, axis=0))
    scale = np.max(np.abs(X), axis=0)
    for j in range(X.shape[1]):
        if norms[j] <= 1e-12 * max(scale[j], 1e-300) or norms[j] == 0:
            raise DegenerateSignalError(f"column {j} is constant")
    Z = Xc / norms
    C = np.clip(Z.T @ Z, -1.0, 1.0)
    C = (C + C.T) / 2
    np.fill_diagonal(C, 1.0)
    return C
