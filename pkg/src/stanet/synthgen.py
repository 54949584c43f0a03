"""Synthetic cohorts with known sources and a controllable class effect.

Each subject's scan is ``X = A @ S + noise`` where ``S`` holds smooth,
partially sparse spatial sources on a square voxel grid and ``A`` holds
oscillatory time courses. Patients differ from controls according to
``class_effect``:

* ``temporal-spectrum``: every patient time course gets an extra sinusoid
  in the upper third of the representable band, ``CLASS_BAND`` =
  [1/3, 1/2] cycles/sample.
* ``spatial-amplitude``: patient sources are amplified inside a fixed
  block of the voxel grid.
* ``both``: both of the above.

These class-effect models are synthetic stand-ins; they say nothing about
real depression data.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from . import matdir

CLASS_EFFECTS = ("spatial-amplitude", "temporal-spectrum", "both")
MIXINGS = ("oscillatory", "identity")

# Normalised frequency in cycles/sample; Nyquist is 0.5.
NYQUIST = 0.5
CLASS_BAND = (NYQUIST * 2 / 3, NYQUIST)
BASE_BAND = (0.01, NYQUIST * 2 / 3)

_BLUR = np.array([1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0])
_BLUR /= _BLUR.sum()
_SPARSITY_QUANTILE = 0.6
_MAX_SOURCE_CORR = 0.2


@dataclass(frozen=True)
class CohortSpec:
    n_patients: int = 51
    n_controls: int = 21
    timepoints: int = 95
    voxels: int = 400
    n_true_sources: int = 8
    class_effect: str = "temporal-spectrum"
    noise_sigma: float = 0.5
    seed: int = 0
    effect_size: float = 1.0
    mixing: str = "oscillatory"

    def __post_init__(self):
        checks = [
            ("n_patients", self.n_patients >= 1, "must be >= 1"),
            ("n_controls", self.n_controls >= 1, "must be >= 1"),
            ("timepoints", self.timepoints > 12, "must be > 12"),
            ("voxels", self.voxels >= self.n_true_sources, "must be >= n_true_sources"),
            ("n_true_sources", self.n_true_sources >= 1, "must be >= 1"),
            ("noise_sigma", self.noise_sigma >= 0, "must be >= 0"),
            ("effect_size", self.effect_size >= 0, "must be >= 0"),
            ("class_effect", self.class_effect in CLASS_EFFECTS, f"must be one of {CLASS_EFFECTS}"),
            ("mixing", self.mixing in MIXINGS, f"must be one of {MIXINGS}"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ValueError(f"CohortSpec.{name} {msg} (got {getattr(self, name)!r})")
        if self.mixing == "identity" and self.n_true_sources > self.timepoints:
            raise ValueError("CohortSpec.n_true_sources must be <= timepoints for identity mixing")

    @property
    def n_subjects(self) -> int:
        return self.n_patients + self.n_controls

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CohortSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"CohortSpec: unknown fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class SubjectScan:
    data: np.ndarray  # T x V
    label: int  # 1 = patient, 0 = control
    subject_id: str

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"{self.subject_id}: scan must be a T x V matrix")
        if not np.all(np.isfinite(self.data)):
            raise ValueError(f"{self.subject_id}: scan has non-finite entries")
        if self.label not in (0, 1):
            raise ValueError(f"{self.subject_id}: label must be 0 or 1")


@dataclass
class GroundTruth:
    sources: np.ndarray  # n_true_sources x V
    mixings: list = field(default_factory=list)  # T x n_true_sources per subject


def grid_side(voxels: int) -> int:
    return int(np.ceil(np.sqrt(voxels)))


def region_mask(voxels: int) -> np.ndarray:
    """Boolean mask of the voxel block amplified under the spatial class effect."""
    side = grid_side(voxels)
    rows = np.arange(voxels) // side
    cols = np.arange(voxels) % side
    block = max(1, side // 3)
    return (rows < block) & (cols < block)


def smooth_sparse_field(rng: np.random.Generator, voxels: int) -> np.ndarray:
    side = grid_side(voxels)
    f = rng.standard_normal((side, side))
    f = convolve1d(f, _BLUR, axis=0, mode="wrap")
    f = convolve1d(f, _BLUR, axis=1, mode="wrap")
    f = f.ravel()[:voxels]
    tau = np.quantile(np.abs(f), _SPARSITY_QUANTILE)
    f = np.sign(f) * np.maximum(np.abs(f) - tau, 0.0)
    f -= f.mean()
    sd = f.std()
    return f / sd if sd > 0 else f


def _sources(rng: np.random.Generator, n: int, voxels: int) -> np.ndarray:
    out = []
    while len(out) < n:
        cand = smooth_sparse_field(rng, voxels)
        if cand.std() == 0:
            continue
        if all(abs(np.corrcoef(cand, s)[0, 1]) < _MAX_SOURCE_CORR for s in out):
            out.append(cand)
    return np.array(out)


def _oscillatory_mixing(rng, spec: CohortSpec, patient: bool) -> np.ndarray:
    T, n = spec.timepoints, spec.n_true_sources
    t = np.arange(T)
    A = np.empty((T, n))
    for j in range(n):
        col = np.zeros(T)
        for _ in range(3):
            f = rng.uniform(*BASE_BAND)
            col += rng.uniform(0.5, 1.5) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        ar = np.empty(T)
        eps = rng.standard_normal(T) * 0.3
        ar[0] = eps[0]
        for i in range(1, T):
            ar[i] = 0.5 * ar[i - 1] + eps[i]
        col += ar
        if patient and spec.class_effect in ("temporal-spectrum", "both"):
            f = rng.uniform(CLASS_BAND[0] + 0.02, CLASS_BAND[1] - 0.02)
            amp = spec.effect_size * rng.uniform(0.75, 1.25)
            col += amp * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        A[:, j] = col
    return A


def generate_cohort(spec: CohortSpec) -> tuple[list[SubjectScan], GroundTruth]:
    """Pure function of ``spec``: same spec, bit-identical scans."""
    root = np.random.SeedSequence(spec.seed)
    src_seq, *subject_seqs = root.spawn(1 + spec.n_subjects)
    S = _sources(np.random.default_rng(src_seq), spec.n_true_sources, spec.voxels)
    mask = region_mask(spec.voxels)

    scans, mixings = [], []
    for i, seq in enumerate(subject_seqs):
        rng = np.random.default_rng(seq)
        patient = i < spec.n_patients
        if spec.mixing == "identity":
            A = np.eye(spec.timepoints, spec.n_true_sources)
        else:
            A = _oscillatory_mixing(rng, spec, patient)
        S_sub = S
        if patient and spec.class_effect in ("spatial-amplitude", "both"):
            S_sub = S.copy()
            S_sub[:, mask] *= 1.0 + spec.effect_size
        X = A @ S_sub
        if spec.noise_sigma > 0:
            X = X + spec.noise_sigma * rng.standard_normal(X.shape)
        sid = f"sub-{i + 1:03d}"
        scans.append(SubjectScan(X, 1 if patient else 0, sid))
        mixings.append(A)
    return scans, GroundTruth(S, mixings)


def band_power(timecourses: np.ndarray, band=CLASS_BAND) -> float:
    """Mean periodogram power of the columns of ``timecourses`` inside ``band``."""
    tc = np.asarray(timecourses, dtype=np.float64)
    tc = tc - tc.mean(axis=0)
    freqs = np.fft.rfftfreq(tc.shape[0])
    power = np.abs(np.fft.rfft(tc, axis=0)) ** 2 / tc.shape[0]
    sel = (freqs >= band[0]) & (freqs <= band[1])
    return float(power[sel].mean())


def save_cohort(path, scans: list[SubjectScan], spec: CohortSpec | None = None) -> Path:
    if len({s.data.shape for s in scans}) > 1:
        raise ValueError("all scans must share T x V")
    header = {
        "kind": "cohort",
        "spec": spec.to_dict() if spec is not None else None,
        "subject_ids": [s.subject_id for s in scans],
        "labels": [int(s.label) for s in scans],
    }
    return matdir.write_dir(path, header, {s.subject_id: s.data for s in scans})


def load_cohort(path) -> tuple[list[SubjectScan], CohortSpec | None]:
    """Load a cohort directory; also the ingestion path for external data."""
    header, mats = matdir.read_dir(path)
    if header.get("kind") != "cohort":
        raise matdir.FormatError(f"{path}: not a cohort directory")
    scans = [
        SubjectScan(mats[sid], int(lab), sid)
        for sid, lab in zip(header["subject_ids"], header["labels"])
    ]
    spec = CohortSpec.from_dict(header["spec"]) if header.get("spec") else None
    return scans, spec
