"""Spatio-temporal feature aggregation (multi-scale conv, ReLU, 6x6 max-pool, concat).

Two single-channel images feed the front end: a subject's T x N IC time
courses (temporal branch) and its N x R spatial similarity matrix (spatial
branch). Each branch runs ``filters_per_scale`` same-padded kernels at every
scale, then ReLU and non-overlapping max pooling. Temporal outputs keep the
pooled time axis; spatial outputs are flattened and repeated along it, so
the fused feature is a (ceil(T/6)) x D sequence.

Convolutions are evaluated as one matrix product per branch: the input
patches are extracted once (they never change during training) and every
kernel is zero-embedded into the largest kernel's window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Tensor, concat, make, transpose

BRANCHES = ("both", "temporal-only", "spatial-only")


@dataclass(frozen=True)
class StfaConfig:
    kernel_sizes: tuple = (3, 5, 7, 9, 11)
    filters_per_scale: int = 4
    pool: tuple = (6, 6)
    branches: str = "both"
    single_scale_override: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        object.__setattr__(self, "pool", tuple(int(p) for p in self.pool))
        ks = list(self.kernel_sizes)
        if self.single_scale_override is not None:
            ks.append(self.single_scale_override)
        if not self.kernel_sizes:
            raise ValueError("StfaConfig.kernel_sizes must not be empty")
        for k in ks:
            if k < 3 or k % 2 == 0:
                raise ValueError(f"StfaConfig: kernel size {k} must be odd and >= 3")
        if self.filters_per_scale < 1:
            raise ValueError("StfaConfig.filters_per_scale must be >= 1")
        if self.branches not in BRANCHES:
            raise ValueError(f"StfaConfig.branches must be one of {BRANCHES}")
        if len(self.pool) != 2 or min(self.pool) < 1:
            raise ValueError("StfaConfig.pool must be two positive window sizes")

    @property
    def scales(self) -> tuple:
        if self.single_scale_override is not None:
            return (self.single_scale_override,)
        return self.kernel_sizes

    @property
    def active_branches(self) -> tuple:
        return {"both": ("temporal", "spatial"),
                "temporal-only": ("temporal",),
                "spatial-only": ("spatial",)}[self.branches]


@dataclass(frozen=True)
class LayoutEntry:
    branch: str
    kernel: int
    filter: int
    offset: int
    width: int


@dataclass
class FusedFeature:
    data: np.ndarray  # T' x D
    layout: list = field(default_factory=list)

    def __post_init__(self):
        total = sum(e.width for e in self.layout)
        if total != self.data.shape[-1]:
            raise ValueError(f"layout covers {total} columns, feature has {self.data.shape[-1]}")


# --- plain array operations ---------------------------------------------------
def conv2d_same(image: np.ndarray, kernel: np.ndarray, bias: float = 0.0) -> np.ndarray:
    """Zero-padded, same-size 2-D cross-correlation plus ``bias``."""
    image = np.asarray(image, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    k = kernel.shape[0]
    if kernel.shape != (k, k) or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {kernel.shape}")
    p = k // 2
    H, W = image.shape
    padded = np.pad(image, p)
    out = np.full((H, W), float(bias))
    for i in range(k):
        for j in range(k):
            out += kernel[i, j] * padded[i:i + H, j:j + W]
    return out


def maxpool(image: np.ndarray, window=(6, 6)) -> np.ndarray:
    """Non-overlapping max pooling over the last two axes; ragged edges keep partial windows."""
    image = np.asarray(image)
    if image.size == 0:
        raise ValueError("maxpool of an empty input")
    wh, ww = window
    H, W = image.shape[-2:]
    Hp, Wp = math.ceil(H / wh), math.ceil(W / ww)
    pad = [(0, 0)] * (image.ndim - 2) + [(0, Hp * wh - H), (0, Wp * ww - W)]
    padded = np.pad(image.astype(np.float64, copy=False), pad, constant_values=-np.inf)
    blocks = padded.reshape(image.shape[:-2] + (Hp, wh, Wp, ww))
    return blocks.max(axis=(-3, -1))


def pooled_shape(H: int, W: int, window=(6, 6)) -> tuple:
    return math.ceil(H / window[0]), math.ceil(W / window[1])


def feature_layout(cfg: StfaConfig, n_components: int, n_regions: int) -> list:
    entries, offset = [], 0
    for branch in cfg.active_branches:
        if branch == "temporal":
            width = pooled_shape(1, n_components, cfg.pool)[1]
        else:
            width = math.prod(pooled_shape(n_components, n_regions, cfg.pool))
        for k in cfg.scales:
            for f in range(cfg.filters_per_scale):
                entries.append(LayoutEntry(branch, k, f, offset, width))
                offset += width
    return entries


def param_shapes(cfg: StfaConfig) -> dict:
    shapes = {}
    for branch in cfg.active_branches:
        for k in cfg.scales:
            shapes[f"stfa.{branch}.k{k}.weight"] = (cfg.filters_per_scale, k, k)
            shapes[f"stfa.{branch}.k{k}.bias"] = (cfg.filters_per_scale,)
    return shapes


def init_params(cfg: StfaConfig, rng: np.random.Generator, dtype=np.float64) -> dict:
    """Kernels uniform in +-1/sqrt(k*k); biases zero."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".weight"):
            bound = 1.0 / shape[1]
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


# --- batched, differentiable path --------------------------------------------
def _patches(images: np.ndarray, kmax: int) -> np.ndarray:
    B, H, W = images.shape
    p = kmax // 2
    padded = np.pad(images, ((0, 0), (p, p), (p, p)))
    view = sliding_window_view(padded, (kmax, kmax), axis=(1, 2))
    return np.ascontiguousarray(view.reshape(B * H * W, kmax * kmax))


class StfaBatch:
    """Inputs for a set of subjects with their convolution patches precomputed."""

    def __init__(self, timecourses, similarity, cfg: StfaConfig, dtype=np.float64):
        self.timecourses = np.asarray(timecourses, dtype=dtype)  # B x T x N
        self.similarity = np.asarray(similarity, dtype=dtype)  # B x N x R
        if self.timecourses.ndim != 3 or self.similarity.ndim != 3:
            raise ValueError("StfaBatch expects B x T x N time courses and B x N x R similarity")
        if self.timecourses.shape[0] != self.similarity.shape[0]:
            raise ValueError("time courses and similarity disagree on subject count")
        if self.timecourses.shape[2] != self.similarity.shape[1]:
            raise ValueError("time courses and similarity disagree on component count")
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.kmax = max(cfg.scales)
        self.images = {"temporal": self.timecourses, "spatial": self.similarity}
        self.patches = {b: _patches(self.images[b], self.kmax) for b in cfg.active_branches}

    @property
    def size(self) -> int:
        return self.timecourses.shape[0]

    @property
    def n_components(self) -> int:
        return self.timecourses.shape[2]

    @property
    def n_regions(self) -> int:
        return self.similarity.shape[2]

    @property
    def pooled_time(self) -> int:
        return math.ceil(self.timecourses.shape[1] / self.cfg.pool[0])

    def layout(self) -> list:
        return feature_layout(self.cfg, self.n_components, self.n_regions)

    def subset(self, idx) -> "StfaBatch":
        idx = np.asarray(idx)
        sub = object.__new__(StfaBatch)
        sub.timecourses = self.timecourses[idx]
        sub.similarity = self.similarity[idx]
        sub.cfg, sub.dtype, sub.kmax = self.cfg, self.dtype, self.kmax
        sub.images = {"temporal": sub.timecourses, "spatial": sub.similarity}
        sub.patches = {}
        for b, P in self.patches.items():
            H, W = self.images[b].shape[1:]
            sub.patches[b] = P.reshape(self.size, H * W, -1)[idx].reshape(len(idx) * H * W, -1)
        return sub


def _conv_relu_pool(patches, image_shape, kernels, biases, scales, kmax, window):
    """Fused conv bank + ReLU + max pool; returns (B, Hp, Wp, C) with C = scales x filters."""
    B, H, W = image_shape
    F = kernels[0].shape[0]
    C = F * len(scales)
    K = np.zeros((kmax * kmax, C), dtype=patches.dtype)
    for s, (k, w) in enumerate(zip(scales, kernels)):
        o = (kmax - k) // 2
        emb = np.zeros((F, kmax, kmax), dtype=patches.dtype)
        emb[:, o:o + k, o:o + k] = w.data
        K[:, s * F:(s + 1) * F] = emb.reshape(F, -1).T
    bias = np.concatenate([b.data for b in biases]).astype(patches.dtype)
    conv = (patches @ K + bias).reshape(B, H, W, C)

    wh, ww = window
    Hp, Wp = math.ceil(H / wh), math.ceil(W / ww)
    # running max over the wh*ww window offsets; strided slices avoid a padded copy
    best = np.full((B, Hp, Wp, C), -np.inf, dtype=conv.dtype)
    arg = np.zeros((B, Hp, Wp, C), dtype=np.int64)
    for i in range(wh):
        for j in range(ww):
            s = conv[:, i::wh, j::ww]
            hs, ws = s.shape[1], s.shape[2]
            if hs == 0 or ws == 0:
                continue
            tgt = best[:, :hs, :ws]
            gt = s > tgt
            np.copyto(tgt, s, where=gt)
            np.copyto(arg[:, :hs, :ws], i * ww + j, where=gt)
    out = np.maximum(best, 0.0)

    # row of the patch matrix that produced each window maximum
    r, c = np.divmod(arg, ww)
    rows = (np.arange(Hp)[None, :, None, None] * wh + r)
    cols = (np.arange(Wp)[None, None, :, None] * ww + c)
    flat = (np.arange(B)[:, None, None, None] * H + rows) * W + cols
    active = best > 0

    def back(g):
        g = np.where(active, g, 0.0)
        gk_full = np.empty((kmax * kmax, C), dtype=patches.dtype)
        for ch in range(C):
            sel = flat[..., ch].ravel()
            gk_full[:, ch] = patches[sel].T @ g[..., ch].ravel()
        gb = g.sum(axis=(0, 1, 2))
        grads = []
        for s, k in enumerate(scales):
            o = (kmax - k) // 2
            gk = gk_full[:, s * F:(s + 1) * F].T.reshape(F, kmax, kmax)[:, o:o + k, o:o + k]
            grads.append(np.ascontiguousarray(gk))
        gbs = [gb[s * F:(s + 1) * F] for s in range(len(scales))]
        return tuple(grads) + tuple(gbs)

    return make(out, tuple(kernels) + tuple(biases), back)


def _repeat_time(x: Tensor, steps: int) -> Tensor:
    data = np.repeat(x.data[:, None, :], steps, axis=1)
    return make(data, (x,), lambda g: (g.sum(axis=1),))


def aggregate_batch(batch: StfaBatch, params: dict) -> Tensor:
    """Fused features for every subject in ``batch`` as a (B, T', D) Tensor.

    ``params`` maps parameter names to Tensors (or arrays for inference).
    """
    cfg = batch.cfg
    scales = cfg.scales
    steps = batch.pooled_time
    parts = []
    for branch in cfg.active_branches:
        try:
            kernels = [_as_t(params[f"stfa.{branch}.k{k}.weight"]) for k in scales]
            biases = [_as_t(params[f"stfa.{branch}.k{k}.bias"]) for k in scales]
        except KeyError as err:
            raise ValueError(f"missing STFA parameter {err}") from None
        for k, w in zip(scales, kernels):
            if w.shape != (cfg.filters_per_scale, k, k):
                raise ValueError(f"stfa.{branch}.k{k}.weight has shape {w.shape}")
        image_shape = batch.images[branch].shape
        pooled = _conv_relu_pool(batch.patches[branch], image_shape, kernels, biases,
                                 scales, batch.kmax, cfg.pool)
        B, Hp, Wp, C = pooled.shape
        if branch == "temporal":
            # (B, T', C, Wp) -> per time step: channel-major, then pooled IC axis
            seq = _permute(pooled, (0, 1, 3, 2)).reshape(B, Hp, C * Wp)
        else:
            flat = _permute(pooled, (0, 3, 1, 2)).reshape(B, C * Hp * Wp)
            seq = _repeat_time(flat, steps)
        parts.append(seq)
    return parts[0] if len(parts) == 1 else concat(parts, axis=-1)


def _as_t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _permute(x: Tensor, axes) -> Tensor:
    return transpose(x, axes)


def aggregate(timecourses: np.ndarray, similarity: np.ndarray, cfg: StfaConfig, params: dict) -> FusedFeature:
    """Fused feature of one subject (T x N time courses, N x R similarity)."""
    batch = StfaBatch(np.asarray(timecourses)[None], np.asarray(similarity)[None], cfg)
    out = aggregate_batch(batch, {k: np.asarray(v, dtype=np.float64) for k, v in params.items()})
    return FusedFeature(out.data[0], batch.layout())
