"""Shared/specific token assignment and training prompt rendering.

Two strategies pick the per-character tokens: Rarest takes the next N tokens
after the rank-0 shared token; Clustered partitions the candidate embeddings
with spherical k-means (cosine distance, k-means++ seeding, restarts) and
takes each cluster's member closest to its centroid.

Clustering operates on rank-ordered rows and derives its random streams from
the seed plus the pool's token texts, so storing the vocabulary rows in a
different order changes nothing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import errors
from .seeds import derive_key, derive_rng
from .store import TokenVocabulary

STRATEGY_RAREST = "rarest"
STRATEGY_CLUSTERED = "clustered"

DEFAULT_RESTARTS = 10
DEFAULT_MAX_ITER = 50


@dataclass(frozen=True)
class TokenPlan:
    shared_id: str
    specific_ids: tuple[str, ...]
    class_descriptor: str = "style"
    strategy: str = STRATEGY_RAREST
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "specific_ids", tuple(self.specific_ids))
        if not self.shared_id:
            raise errors.MalformedRow("shared token must be non-empty")
        if len(set(self.specific_ids)) != len(self.specific_ids):
            raise errors.MalformedRow("specific tokens must be pairwise distinct")
        if self.shared_id in self.specific_ids:
            raise errors.MalformedRow("shared token cannot double as a specific token")
        if self.strategy not in (STRATEGY_RAREST, STRATEGY_CLUSTERED):
            raise errors.MalformedRow(f"unknown strategy {self.strategy!r}")

    @property
    def n_characters(self) -> int:
        return len(self.specific_ids)

    def assigned_tokens(self) -> set[str]:
        return {self.shared_id, *self.specific_ids}


def save_plan(plan: TokenPlan, path: str | Path) -> Path:
    path = Path(path)
    doc = {
        "shared_id": plan.shared_id,
        "specific_ids": list(plan.specific_ids),
        "class": plan.class_descriptor,
        "strategy": plan.strategy,
        "seed": plan.seed,
    }
    try:
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise errors.IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def load_plan(path: str | Path) -> TokenPlan:
    path = Path(path)
    if not path.exists():
        raise errors.MissingFile(f"plan not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise errors.IoFailure(f"cannot read plan {path}: {exc}") from exc
    return TokenPlan(
        shared_id=doc["shared_id"],
        specific_ids=tuple(doc["specific_ids"]),
        class_descriptor=doc.get("class", "style"),
        strategy=doc.get("strategy", STRATEGY_RAREST),
        seed=int(doc.get("seed", 0)),
    )


@dataclass(frozen=True)
class ClusteringResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations_used: int
    restart_index: int
    inertia_per_iteration: tuple[float, ...]


def _unit_rows(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    if (norms == 0).any():
        raise errors.ZeroVector(f"row {int(np.argmin(norms))} has zero norm")
    return X / norms[:, None]


def _point_distances(sims: np.ndarray, assign: np.ndarray) -> np.ndarray:
    d = 1.0 - sims[np.arange(sims.shape[0]), assign]
    return np.maximum(d, 0.0)


def _kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding with squared cosine distance as the sampling weight."""
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    dmin = np.maximum(1.0 - X @ X[chosen[0]], 0.0)
    while len(chosen) < k:
        w = dmin * dmin
        w[chosen] = 0.0
        total = w.sum()
        if total <= 0.0:
            # Remaining points coincide with chosen centroids; pick uniformly.
            remaining = sorted(set(range(n)) - set(chosen))
            nxt = remaining[int(rng.integers(len(remaining)))]
        else:
            r = rng.random() * total
            nxt = int(np.searchsorted(np.cumsum(w), r, side="right"))
            nxt = min(nxt, n - 1)
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.maximum(1.0 - X @ X[nxt], 0.0))
    return X[chosen].copy()


def _repair_empty_clusters(X, centroids, sims, assign) -> None:
    """Turn the point farthest from its centroid into a singleton centroid for
    each empty cluster. Mutates centroids, sims and assign in place."""
    counts = np.bincount(assign, minlength=centroids.shape[0])
    for c in np.flatnonzero(counts == 0):
        d = _point_distances(sims, assign)
        d[counts[assign] <= 1] = -np.inf  # do not empty another cluster
        far = int(np.argmax(d))
        counts[assign[far]] -= 1
        counts[c] += 1
        assign[far] = c
        centroids[c] = X[far]
        sims[:, c] = X @ X[far]


def kmeans_spherical(
    X,
    k: int,
    restarts: int = DEFAULT_RESTARTS,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
) -> ClusteringResult:
    """Spherical k-means: unit rows, distance 1 - cosine, renormalized mean
    centroids. Returns the restart with minimum inertia (ties keep the lowest
    restart index). Deterministic for a fixed seed."""
    if hasattr(X, "normalized") and not X.normalized:
        raise errors.NormViolation("clustering requires embeddings with the normalized flag set")
    raw = X.values if hasattr(X, "values") else np.asarray(X)
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] == 0:
        raise errors.TooFewPoints("clustering needs a non-empty 2-d matrix")
    norms = np.linalg.norm(raw, axis=1)
    if (np.abs(norms - 1.0) > 1e-4).any():
        raise errors.NormViolation("clustering input rows must be unit length within 1e-4")
    Xu = raw / norms[:, None]
    n = Xu.shape[0]
    if k < 1 or k > n:
        raise errors.TooFewPoints(f"k={k} invalid for {n} points")
    if restarts < 1:
        raise errors.UsageError("restarts must be >= 1")
    if k > 1 and bool(np.all(np.abs(Xu - Xu[0]) < 1e-12)):
        raise errors.DegenerateInput("all rows identical, cannot form more than one cluster")

    best: ClusteringResult | None = None
    for r in range(restarts):
        rng = derive_rng(seed, "kmeans", r)
        result = _lloyd(Xu, k, max_iter, rng, r)
        if best is None or result.inertia < best.inertia:
            best = result
    assert best is not None
    return best


def _lloyd(Xu: np.ndarray, k: int, max_iter: int, rng: np.random.Generator, restart_index: int) -> ClusteringResult:
    centroids = _kmeanspp_init(Xu, k, rng)
    assign: np.ndarray | None = None
    history: list[float] = []
    iterations = 0
    for it in range(1, max_iter + 1):
        iterations = it
        sims = Xu @ centroids.T
        new_assign = np.argmax(sims, axis=1)
        _repair_empty_clusters(Xu, centroids, sims, new_assign)
        inertia = math.fsum(_point_distances(sims, new_assign))
        if history:
            assert inertia <= history[-1] + 1e-12, "inertia increased within a restart"
        history.append(inertia)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        if it < max_iter:
            for c in range(k):
                members = Xu[assign == c]
                mean = members.mean(axis=0)
                norm = np.linalg.norm(mean)
                if norm > 0:
                    centroids[c] = mean / norm
    assert assign is not None
    return ClusteringResult(
        assignments=assign,
        centroids=centroids,
        inertia=history[-1],
        iterations_used=iterations,
        restart_index=restart_index,
        inertia_per_iteration=tuple(history),
    )


def select_rarest(vocab: TokenVocabulary, n_characters: int) -> TokenPlan:
    """Shared token = rank 0; specific tokens = ranks 1..N in rank order."""
    if len(vocab) < n_characters + 1:
        raise errors.VocabularyTooSmall(
            f"{len(vocab)} tokens cannot cover {n_characters} characters plus a shared token"
        )
    ranked = [t for t, _ in vocab.rank_order()]
    return TokenPlan(
        shared_id=ranked[0],
        specific_ids=tuple(ranked[1 : n_characters + 1]),
        strategy=STRATEGY_RAREST,
        seed=0,
    )


def select_clustered(
    vocab: TokenVocabulary,
    n_characters: int,
    seed: int,
    pool_size: int | None = None,
    restarts: int = DEFAULT_RESTARTS,
    max_iter: int = DEFAULT_MAX_ITER,
) -> TokenPlan:
    """Cluster the candidate pool into one cluster per character and take each
    cluster's token closest to its centroid (ties to the lower rank). Clusters
    map to characters by ascending minimum member rank."""
    if len(vocab) < n_characters + 1:
        raise errors.VocabularyTooSmall(
            f"{len(vocab)} tokens cannot cover {n_characters} characters plus a shared token"
        )
    ranked = vocab.rank_order()
    shared = ranked[0][0]
    pool = ranked[1:]
    if pool_size is not None:
        pool = pool[:pool_size]
    if len(pool) < n_characters:
        raise errors.VocabularyTooSmall(f"candidate pool of {len(pool)} cannot fill {n_characters} clusters")
    if n_characters == 0:
        return TokenPlan(shared_id=shared, specific_ids=(), strategy=STRATEGY_CLUSTERED, seed=seed)
    if vocab.embeddings is None:
        raise errors.MissingEmbeddingSpace("clustered selection needs token embeddings")

    pool_texts = [t for t, _ in pool]
    rows = [i for _, i in pool]
    P = _unit_rows(vocab.embeddings.values[rows])
    effective_seed = derive_key(seed, "clustered", *pool_texts)
    result = kmeans_spherical(P, k=n_characters, restarts=restarts, max_iter=max_iter, seed=effective_seed)

    picks: list[tuple[int, str]] = []  # (min member pool-index, chosen token)
    for c in range(n_characters):
        members = np.flatnonzero(result.assignments == c)
        sims = P[members] @ result.centroids[c]
        best_pos = 0
        for j in range(1, len(members)):
            if sims[j] > sims[best_pos]:
                best_pos = j
        picks.append((int(members[0]), pool_texts[int(members[best_pos])]))
    picks.sort(key=lambda p: p[0])
    return TokenPlan(
        shared_id=shared,
        specific_ids=tuple(tok for _, tok in picks),
        strategy=STRATEGY_CLUSTERED,
        seed=seed,
    )


def render_training_prompts(plan: TokenPlan, character_ids) -> list[str]:
    """One '[specific] [shared] [class]' prompt per character, in order."""
    character_ids = list(character_ids)
    if len(character_ids) != plan.n_characters:
        raise errors.LengthMismatch(
            f"{len(character_ids)} character ids for {plan.n_characters} specific tokens"
        )
    return [f"{sid} {plan.shared_id} {plan.class_descriptor}" for sid in plan.specific_ids]
