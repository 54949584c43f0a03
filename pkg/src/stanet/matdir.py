"""Directory format shared by cohorts, decompositions, templates and models.

A directory holds ``header.json`` plus one ``<name>.f64`` file per matrix.
Matrix files are raw row-major little-endian float64; their shapes live in
the header under ``"matrices"``.
"""
from __future__ import annotations

import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

HEADER = "header.json"
_DTYPE = np.dtype("<f8")


class FormatError(ValueError):
    pass


def write_dir(path, header: dict, matrices: dict[str, np.ndarray]) -> Path:
    """Write ``header`` and ``matrices`` to ``path`` atomically (tmp dir + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        entries = []
        for name, arr in matrices.items():
            arr = np.asarray(arr, dtype=np.float64)
            fname = f"{name}.f64"
            arr.astype(_DTYPE).tofile(tmp / fname)
            entries.append({"name": name, "file": fname, "shape": list(arr.shape)})
        full = dict(header)
        full["matrices"] = entries
        (tmp / HEADER).write_text(json.dumps(full, indent=2, sort_keys=True) + "\n")
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def read_dir(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    hfile = path / HEADER
    if not hfile.is_file():
        raise FormatError(f"{path}: missing {HEADER}")
    header = json.loads(hfile.read_text())
    matrices = {}
    for entry in header.get("matrices", []):
        shape = tuple(entry["shape"])
        data = np.fromfile(path / entry["file"], dtype=_DTYPE)
        expected = int(np.prod(shape)) if shape else 1
        if data.size != expected:
            raise FormatError(
                f"{path / entry['file']}: {data.size} values, header says {shape}"
            )
        matrices[entry["name"]] = data.reshape(shape).astype(np.float64)
    return header, matrices
