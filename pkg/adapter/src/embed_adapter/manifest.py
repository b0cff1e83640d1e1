"""Writer for the stylekit embedding file format.

A matrix travels as {stem}.manifest.json plus {stem}.f32: the manifest names
rows, dim, dtype (always little-endian float32), a role tag and the blob; the
blob holds the rows in row-major order. The adapter also records the encoder
checkpoint identifier in the manifest.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST_SUFFIX = ".manifest.json"


def manifest_paths(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    name = path.name
    if name.endswith(MANIFEST_SUFFIX):
        stem = name[: -len(MANIFEST_SUFFIX)]
    elif name.endswith(".json"):
        stem = name[: -len(".json")]
    else:
        stem = name
    return path.with_name(stem + MANIFEST_SUFFIX), path.with_name(stem + ".f32")


def write_matrix(values: np.ndarray, path: str | Path, role: str, normalized: bool, checkpoint: str) -> Path:
    values = np.ascontiguousarray(values, dtype=np.float32)
    manifest_path, blob_path = manifest_paths(path)
    doc = {
        "version": 1,
        "role": role,
        "rows": int(values.shape[0]),
        "dim": int(values.shape[1]),
        "dtype": "f32le",
        "normalized": bool(normalized),
        "blob": blob_path.name,
        "checkpoint": checkpoint,
    }
    blob_path.write_bytes(values.astype("<f4", copy=False).tobytes(order="C"))
    manifest_path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return manifest_path
