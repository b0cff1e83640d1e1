"""Generation identities: random unused tokens or random embedding vectors.

Embedding identities come from Gaussian statistics (population moments) fit
on token embeddings, excluding tokens already assigned by the plan. The
univariate sampler draws each dimension independently; the multivariate
sampler draws through the Cholesky factor of the covariance (plus the
smallest jitter that makes factorization succeed).

Every payload is a pure function of (inputs, seed, sample_index). Both
embedding samplers consume the same derived stream, so a diagonal covariance
makes them agree exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import errors
from .seeds import derive_rng
from .store import TokenVocabulary

JITTER_LADDER = (0.0, 1e-8, 1e-6, 1e-4)

KIND_TOKEN = "token"
KIND_EMBEDDING = "embedding"


@dataclass(frozen=True)
class EmbeddingStats:
    """Gaussian moments of an embedding pool plus a usable Cholesky factor."""

    mean: np.ndarray
    std: np.ndarray
    covariance: np.ndarray
    cholesky: np.ndarray
    shrinkage: float
    source_rows: int

    def __post_init__(self):
        cov = self.covariance
        if np.abs(cov - cov.T).max() > 1e-6:
            raise errors.FactorizationFailure("covariance is not symmetric")
        if np.abs(self.std**2 - np.diag(cov)).max() > 1e-6:
            raise errors.FactorizationFailure("std does not match the covariance diagonal")
        target = cov + self.shrinkage * np.eye(cov.shape[0])
        residual = np.linalg.norm(self.cholesky @ self.cholesky.T - target)
        if residual > 1e-4:
            raise errors.FactorizationFailure(f"cholesky reconstruction off by {residual:.3e}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class IdentityPayload:
    kind: str
    token_text: str | None
    vector: np.ndarray | None
    sample_index: int
    seed: int

    def __post_init__(self):
        if self.kind == KIND_TOKEN:
            if self.token_text is None or self.vector is not None:
                raise errors.MalformedRow("token payload must carry a token and no vector")
        elif self.kind == KIND_EMBEDDING:
            if self.vector is None or self.token_text is not None:
                raise errors.MalformedRow("embedding payload must carry a vector and no token")
        else:
            raise errors.MalformedRow(f"unknown payload kind {self.kind!r}")


@dataclass(frozen=True)
class EmbeddingPrompt:
    """Prompt descriptor for a raw-vector identity: the consumer injects the
    vector at `injection_slot` and appends the text suffix."""

    injected_vector: np.ndarray
    suffix: str
    injection_slot: int = 0


def _pool_rows(vocab: TokenVocabulary, exclude) -> tuple[list[str], np.ndarray | None]:
    exclude = set(exclude or ())
    tokens = []
    rows = []
    for text, row in vocab.rank_order():
        if text in exclude:
            continue
        tokens.append(text)
        rows.append(row)
    values = None
    if vocab.embeddings is not None:
        values = vocab.embeddings.values[rows].astype(np.float64)
    return tokens, values


def mean_pool_norm(vocab: TokenVocabulary, exclude=frozenset()) -> float:
    """Mean Euclidean norm of the non-excluded token embeddings; the target
    for optional rescaling of sampled vectors."""
    if vocab.embeddings is None:
        raise errors.MissingEmbeddingSpace("vocabulary has no embeddings")
    _, X = _pool_rows(vocab, exclude)
    assert X is not None
    if X.shape[0] == 0:
        raise errors.EmptyPool("every token is excluded")
    return float(np.linalg.norm(X, axis=1).mean())


def fit_embedding_stats(vocab: TokenVocabulary, exclude=frozenset()) -> EmbeddingStats:
    """Population mean/std/covariance of the non-excluded token embeddings."""
    if vocab.embeddings is None:
        raise errors.MissingEmbeddingSpace("vocabulary has no embeddings to fit")
    _, X = _pool_rows(vocab, exclude)
    assert X is not None
    n = X.shape[0]
    if n < 2:
        raise errors.TooFewSamples(f"need at least 2 embeddings after exclusion, have {n}")
    mu = X.mean(axis=0)
    centered = X - mu
    cov = centered.T @ centered / n
    cov = (cov + cov.T) / 2.0
    std = np.sqrt(np.diag(cov).copy())
    chol = None
    shrinkage = 0.0
    for lam in JITTER_LADDER:
        try:
            chol = np.linalg.cholesky(cov + lam * np.eye(cov.shape[0]))
            shrinkage = lam
            break
        except np.linalg.LinAlgError:
            continue
    if chol is None:
        raise errors.FactorizationFailure(
            f"covariance not factorizable with jitter up to {JITTER_LADDER[-1]}"
        )
    return EmbeddingStats(
        mean=mu, std=std, covariance=cov, cholesky=chol, shrinkage=shrinkage, source_rows=n
    )


def sample_token(vocab: TokenVocabulary, exclude, seed: int, sample_index: int) -> IdentityPayload:
    """Uniform draw from the non-excluded tokens."""
    tokens, _ = _pool_rows(vocab, exclude)
    if not tokens:
        raise errors.EmptyPool("every token is excluded")
    rng = derive_rng(seed, "token", sample_index)
    choice = tokens[int(rng.integers(len(tokens)))]
    return IdentityPayload(
        kind=KIND_TOKEN, token_text=choice, vector=None, sample_index=sample_index, seed=seed
    )


def _standard_draw(stats: EmbeddingStats, seed: int, sample_index: int) -> np.ndarray:
    rng = derive_rng(seed, "embedding", sample_index)
    return rng.standard_normal(stats.dim)


def _finish_vector(vec: np.ndarray, target_norm: float | None) -> np.ndarray:
    if target_norm is not None:
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise errors.ZeroVector("cannot rescale a zero vector to a target norm")
        vec = vec * (target_norm / norm)
    vec.flags.writeable = False
    return vec


def sample_univariate(
    stats: EmbeddingStats, seed: int, sample_index: int, target_norm: float | None = None
) -> IdentityPayload:
    """Independent per-dimension Gaussian draw around the pool mean."""
    z = _standard_draw(stats, seed, sample_index)
    vec = stats.mean + stats.std * z
    return IdentityPayload(
        kind=KIND_EMBEDDING,
        token_text=None,
        vector=_finish_vector(vec, target_norm),
        sample_index=sample_index,
        seed=seed,
    )


def sample_multivariate(
    stats: EmbeddingStats, seed: int, sample_index: int, target_norm: float | None = None
) -> IdentityPayload:
    """Correlated Gaussian draw through the Cholesky factor.

    A fully zero std collapses to the mean exactly; the factorization jitter
    is not sampled in that case.
    """
    if bool(np.all(stats.std == 0.0)):
        vec = stats.mean.copy()
    else:
        z = _standard_draw(stats, seed, sample_index)
        vec = stats.mean + stats.cholesky @ z
    return IdentityPayload(
        kind=KIND_EMBEDDING,
        token_text=None,
        vector=_finish_vector(vec, target_norm),
        sample_index=sample_index,
        seed=seed,
    )


def render_generation_prompt(payload: IdentityPayload, shared_id: str):
    """'[token] [shared] style' for token payloads, an injection descriptor
    for embedding payloads."""
    if not shared_id:
        raise errors.MalformedRow("shared token must be non-empty")
    if payload.kind == KIND_TOKEN:
        return f"{payload.token_text} {shared_id} style"
    return EmbeddingPrompt(injected_vector=payload.vector, suffix=f"{shared_id} style", injection_slot=0)


# ---------------------------------------------------------------------------
# JSONL batches


def write_identities(payloads, path: str | Path) -> Path:
    path = Path(path)
    lines = []
    for p in payloads:
        doc: dict = {"kind": p.kind, "sample_index": p.sample_index, "seed": p.seed}
        if p.kind == KIND_TOKEN:
            doc["token"] = p.token_text
        else:
            doc["vector"] = [float(x) for x in p.vector]
        lines.append(json.dumps(doc, sort_keys=True))
    try:
        path.write_text("\n".join(lines) + ("\n" if lines else ""))
    except OSError as exc:
        raise errors.IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_identities(path: str | Path) -> list[IdentityPayload]:
    path = Path(path)
    if not path.exists():
        raise errors.MissingFile(f"identity batch not found: {path}")
    payloads = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError:
            raise errors.MalformedRow(f"{path}:{lineno}: invalid json") from None
        vector = None
        if "vector" in doc:
            vector = np.asarray(doc["vector"], dtype=np.float64)
            vector.flags.writeable = False
        payloads.append(
            IdentityPayload(
                kind=doc["kind"],
                token_text=doc.get("token"),
                vector=vector,
                sample_index=int(doc["sample_index"]),
                seed=int(doc["seed"]),
            )
        )
    return payloads
