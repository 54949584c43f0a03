"""Real part of the discrete Fourier transform along the last axis.

Power-of-two lengths use an iterative radix-2 Cooley-Tukey transform;
other lengths fall back to a direct O(n^2) evaluation against a cached
cosine table. Both paths operate on arbitrary leading batch dimensions.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=64)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def cosine_table(n: int) -> np.ndarray:
    """C[j, k] = cos(2 pi j k / n); symmetric, so x @ C is Re(DFT(x))."""
    jk = np.outer(np.arange(n), np.arange(n)) % n
    return np.cos(2.0 * np.pi * jk / n)


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Complex DFT along the last axis; ``x.shape[-1]`` must be a power of two."""
    x = np.asarray(x)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    lead = x.shape[:-1]
    y = x[..., _bit_reversal(n)].astype(np.complex128)
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / m)
        y = y.reshape(lead + (n // m, m))
        even = y[..., :half]
        odd = y[..., half:] * tw
        y = np.concatenate([even + odd, even - odd], axis=-1)
        m *= 2
    return y.reshape(lead + (n,))


@lru_cache(maxsize=64)
def _table_as(n: int, dtype) -> np.ndarray:
    return cosine_table(n).astype(dtype)


def real_fft_dense(x: np.ndarray) -> np.ndarray:
    """Re(DFT(x)) as one matrix product with the cosine table, for any length.

    Same linear map as ``real_fft``; faster for the small batched inputs
    seen during training, where the butterfly loop is overhead-bound.
    """
    x = np.asarray(x)
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.dtype(np.float64)
    return x @ _table_as(x.shape[-1], dtype)


def real_fft(x: np.ndarray) -> np.ndarray:
    """Re(FFT(x)) along the last axis, same shape and float dtype as ``x``."""
    x = np.asarray(x)
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    n = x.shape[-1]
    if n == 0:
        raise ValueError("real_fft of an empty vector")
    if is_power_of_two(n):
        return fft_radix2(x).real.astype(dtype, copy=False)
    return (x @ cosine_table(n).astype(dtype, copy=False)).astype(dtype, copy=False)
