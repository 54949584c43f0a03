"""Per-stage seed derivation.

Every random stage draws from ``derive_seed(root, stage, ...)`` so that a
single top-level seed fixes the whole run and stages never share streams.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *names) -> int:
    key = ":".join([str(int(root))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def stage_rng(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *names))
