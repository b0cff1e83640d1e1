"""Style fidelity and diversity metrics over embedding sets.

Fidelity is the mean non-negative cosine similarity between every generated
embedding and every reference embedding; it requires pre-normalized rows so
the cosine reduces to a dot product. Diversity is the geometric mean of the
per-dimension standard deviations (population denominator) of a generated
set, computed in log space with an exact-zero short circuit.

All reductions use a fixed row-major order with exact (fsum) accumulation,
so results are bit-stable across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import errors

SPACE_STYLE = "StyleAdapted"
SPACE_CLIP = "ClipIdentity"


@dataclass(frozen=True)
class MetricValue:
    value: float
    n_generated: int
    m_reference: int
    space: str


def _as_values(m) -> np.ndarray:
    if hasattr(m, "values"):
        return m.values
    return np.asarray(m)


def _require_normalized(m, what: str) -> None:
    if hasattr(m, "normalized") and not m.normalized:
        raise errors.NormViolation(f"{what} requires embeddings with the normalized flag set")


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise errors.DimMismatch(f"vector dims differ: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise errors.ZeroVector("cosine of a zero vector is undefined")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def fidelity(gen, refs, space: str = SPACE_STYLE) -> MetricValue:
    """Mean clamped pairwise similarity between generated and reference sets."""
    V = _as_values(gen).astype(np.float64)
    D = _as_values(refs).astype(np.float64)
    if V.shape[0] == 0 or D.shape[0] == 0:
        raise errors.EmptySet("fidelity needs at least one row on each side")
    if V.shape[1] != D.shape[1]:
        raise errors.DimMismatch(f"embedding dims differ: {V.shape[1]} vs {D.shape[1]}")
    _require_normalized(gen, "fidelity")
    _require_normalized(refs, "fidelity")
    sims = np.clip(V @ D.T, 0.0, 1.0)
    n, m = V.shape[0], D.shape[0]
    value = math.fsum(sims.ravel(order="C")) / (n * m)
    assert 0.0 <= value <= 1.0
    return MetricValue(value=value, n_generated=n, m_reference=m, space=space)


def per_image_fidelity(v: np.ndarray, refs) -> float:
    """Fidelity of a single embedding against all references."""
    D = _as_values(refs).astype(np.float64)
    v = np.asarray(v, dtype=np.float64)
    if D.shape[0] == 0:
        raise errors.EmptySet("no reference embeddings")
    if v.shape != (D.shape[1],):
        raise errors.DimMismatch(f"vector dim {v.shape} does not match references {D.shape[1]}")
    _require_normalized(refs, "per-image fidelity")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise errors.ZeroVector("zero embedding")
    if abs(norm - 1.0) > 1e-4:
        raise errors.NormViolation(f"per-image fidelity requires a unit vector, norm is {norm:.6f}")
    sims = np.clip(D @ v, 0.0, 1.0)
    return math.fsum(sims) / D.shape[0]


def nearest_reference_similarity(v: np.ndarray, refs) -> tuple[float, int]:
    """Highest unclamped cosine against the reference rows and its index.

    Ties resolve to the lowest index.
    """
    D = _as_values(refs).astype(np.float64)
    v = np.asarray(v, dtype=np.float64)
    if D.shape[0] == 0:
        raise errors.EmptySet("no reference embeddings")
    if v.shape != (D.shape[1],):
        raise errors.DimMismatch(f"vector dim {v.shape} does not match references {D.shape[1]}")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise errors.ZeroVector("zero embedding")
    ref_norms = np.linalg.norm(D, axis=1)
    if (ref_norms == 0).any():
        raise errors.ZeroVector(f"reference row {int(np.argmin(ref_norms))} has zero norm")
    sims = np.clip((D @ v) / (ref_norms * norm), -1.0, 1.0)
    idx = int(np.argmax(sims))
    return float(sims[idx]), idx


def diversity(gen, space: str = SPACE_CLIP) -> MetricValue:
    """Geometric mean of per-dimension standard deviations.

    Any zero-variance dimension makes the result exactly 0. Uses the
    population denominator, so a single row yields 0.
    """
    V = _as_values(gen).astype(np.float64)
    if V.ndim != 2 or V.shape[0] == 0:
        raise errors.EmptySet("diversity needs at least one row")
    sigma = V.std(axis=0, ddof=0)
    if (sigma == 0.0).any():
        value = 0.0
    else:
        value = float(math.exp(math.fsum(np.log(sigma)) / V.shape[1]))
    assert value >= 0.0
    return MetricValue(value=value, n_generated=V.shape[0], m_reference=0, space=space)
