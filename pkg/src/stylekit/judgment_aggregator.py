"""Pairwise-comparison and rating aggregation into method rankings.

Comparisons are fitted with the Bradley-Terry model via minorization-
maximization updates; ties count as half a win for each side (configurable),
"neither fits" responses are dropped. Strengths are normalized to geometric
mean 1 and also reported on a display scale of 400*log10(strength) centered
so the mean rating is 1000. Expert ratings are aggregated as pooled
arithmetic means over records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import errors
from .store import ComparisonRecord, RatingRecord, OUTCOME_A, OUTCOME_B, OUTCOME_TIE, OUTCOME_NEITHER

TIE_HALF_WIN = "half_win"
TIE_DROP = "drop"
NEITHER_DROP = "drop"

DISPLAY_SLOPE = 400.0
DISPLAY_CENTER = 1000.0


@dataclass(frozen=True)
class BTResult:
    strengths: dict[str, float]
    display_ratings: dict[str, float]
    ranks: dict[str, int]
    log_likelihood: float
    iterations: int
    tie_policy: str
    neither_policy: str
    log_likelihood_history: tuple[float, ...]

    def __post_init__(self):
        logs = [math.log(s) for s in self.strengths.values()]
        if abs(math.fsum(logs) / len(logs)) > 1e-9:
            raise errors.DegenerateRecords("strengths are not geometric-mean normalized")
        mean_rating = math.fsum(self.display_ratings.values()) / len(self.display_ratings)
        if abs(mean_rating - DISPLAY_CENTER) > 1e-6:
            raise errors.DegenerateRecords("display ratings are not centered at 1000")
        expected = rank_by_score(self.strengths)
        if self.ranks != expected:
            raise errors.DegenerateRecords("ranks do not follow descending strength")


def rank_by_score(scores: dict[str, float]) -> dict[str, int]:
    """1-based ranks by descending score; ties stay in method-id order."""
    ordered = sorted(scores, key=lambda m: (-scores[m], m))
    return {m: i + 1 for i, m in enumerate(ordered)}


def _win_matrix(records, tie_policy: str, neither_policy: str):
    if tie_policy not in (TIE_HALF_WIN, TIE_DROP):
        raise errors.UsageError(f"unknown tie policy {tie_policy!r}")
    if neither_policy != NEITHER_DROP:
        raise errors.UsageError(f"unknown neither policy {neither_policy!r}")
    methods = sorted({r.method_a for r in records} | {r.method_b for r in records})
    index = {m: i for i, m in enumerate(methods)}
    W = np.zeros((len(methods), len(methods)))
    used = 0
    for r in records:
        a, b = index[r.method_a], index[r.method_b]
        if r.outcome == OUTCOME_A:
            W[a, b] += 1.0
        elif r.outcome == OUTCOME_B:
            W[b, a] += 1.0
        elif r.outcome == OUTCOME_TIE:
            if tie_policy == TIE_DROP:
                continue
            W[a, b] += 0.5
            W[b, a] += 0.5
        elif r.outcome == OUTCOME_NEITHER:
            continue
        used += 1
    return methods, W, used


def _connected_components(methods, adjacency: np.ndarray):
    unvisited = set(range(len(methods)))
    components = []
    while unvisited:
        start = min(unvisited)
        stack = [start]
        comp = set()
        while stack:
            node = stack.pop()
            if node in comp:
                continue
            comp.add(node)
            stack.extend(j for j in np.flatnonzero(adjacency[node]) if j not in comp)
        unvisited -= comp
        components.append({methods[i] for i in comp})
    return components


def _is_strongly_connected(edges: np.ndarray) -> bool:
    n = edges.shape[0]

    def reach(adj):
        seen = {0}
        stack = [0]
        while stack:
            node = stack.pop()
            for j in np.flatnonzero(adj[node]):
                if j not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        return len(seen) == n

    return reach(edges) and reach(edges.T)


def _log_likelihood(W: np.ndarray, pi: np.ndarray) -> float:
    terms = []
    n = len(pi)
    for i in range(n):
        for j in range(n):
            if i != j and W[i, j] > 0:
                terms.append(W[i, j] * math.log(pi[i] / (pi[i] + pi[j])))
    return math.fsum(terms)


def fit_bradley_terry(
    records,
    tie_policy: str = TIE_HALF_WIN,
    neither_policy: str = NEITHER_DROP,
    max_iter: int = 1000,
    tol: float = 1e-10,
    initial_strengths: dict[str, float] | None = None,
) -> BTResult:
    """Maximum-likelihood strengths from pairwise outcomes via MM updates.

    Requires a connected comparison graph and a win pattern that admits a
    finite optimum (strongly connected win digraph after policy application).
    """
    records = list(records)
    if not records:
        raise errors.NoRecords("no comparison records")
    methods, W, used = _win_matrix(records, tie_policy, neither_policy)
    if used == 0:
        raise errors.NoRecords("every comparison was dropped by the tie/neither policies")
    if len(methods) < 2:
        raise errors.NoRecords("ranking requires at least two methods")
    counts = W + W.T
    components = _connected_components(methods, counts > 0)
    if len(components) > 1:
        raise errors.DisconnectedGraph(components)
    if not _is_strongly_connected(W > 0):
        raise errors.DegenerateRecords(
            "win pattern drives some strength to 0 or infinity; no finite fit exists"
        )

    n = len(methods)
    if initial_strengths is None:
        pi = np.ones(n)
    else:
        pi = np.array([float(initial_strengths[m]) for m in methods])
        if (pi <= 0).any():
            raise errors.UsageError("initial strengths must be positive")
    wins = W.sum(axis=1)
    history = [_log_likelihood(W, pi)]
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        pair_sums = pi[:, None] + pi[None, :]
        ratio = np.divide(counts, pair_sums, out=np.zeros_like(counts), where=counts > 0)
        new_pi = wins / ratio.sum(axis=1)
        new_pi /= math.exp(math.fsum(np.log(new_pi)) / n)
        ll = _log_likelihood(W, new_pi)
        assert ll >= history[-1] - 1e-9, "MM log-likelihood decreased"
        history.append(ll)
        change = np.max(np.abs(new_pi - pi) / pi)
        pi = new_pi
        if change < tol:
            break

    log10_pi = np.log10(pi)
    center = DISPLAY_CENTER - DISPLAY_SLOPE * log10_pi.mean()
    display = DISPLAY_SLOPE * log10_pi + center
    strengths = {m: float(pi[i]) for i, m in enumerate(methods)}
    return BTResult(
        strengths=strengths,
        display_ratings={m: float(display[i]) for i, m in enumerate(methods)},
        ranks=rank_by_score(strengths),
        log_likelihood=history[-1],
        iterations=iterations,
        tie_policy=tie_policy,
        neither_policy=neither_policy,
        log_likelihood_history=tuple(history),
    )


# ---------------------------------------------------------------------------
# Ratings


@dataclass(frozen=True)
class RatingSummary:
    mean: float
    count: int


def aggregate_ratings(records) -> dict[tuple[str, str], RatingSummary]:
    """Pooled mean score and count per (dataset, method)."""
    records = list(records)
    if not records:
        raise errors.EmptyGroup("no rating records")
    groups: dict[tuple[str, str], list[int]] = {}
    for r in records:
        groups.setdefault((r.dataset, r.method), []).append(r.score)
    return {
        key: RatingSummary(mean=math.fsum(scores) / len(scores), count=len(scores))
        for key, scores in groups.items()
    }


def pooled_ratings(records) -> dict[str, RatingSummary]:
    """Pooled mean score per method over all datasets' records."""
    records = list(records)
    if not records:
        raise errors.EmptyGroup("no rating records")
    groups: dict[str, list[int]] = {}
    for r in records:
        groups.setdefault(r.method, []).append(r.score)
    return {
        m: RatingSummary(mean=math.fsum(scores) / len(scores), count=len(scores))
        for m, scores in groups.items()
    }


# ---------------------------------------------------------------------------
# Rank tables


@dataclass(frozen=True)
class RankedEntry:
    rank: int
    method: str
    score: float


@dataclass(frozen=True)
class RankTables:
    """Per-dataset rankings plus a Global ranking over the pooled records."""

    kind: str  # "comparisons" or "ratings"
    per_dataset: dict[str, list[RankedEntry]]
    global_ranking: list[RankedEntry]
    metadata: dict


def _entries(scores: dict[str, float]) -> list[RankedEntry]:
    ranks = rank_by_score(scores)
    ordered = sorted(scores, key=lambda m: ranks[m])
    return [RankedEntry(rank=ranks[m], method=m, score=scores[m]) for m in ordered]


def _dataset_order(records) -> list[str]:
    seen: dict[str, None] = {}
    for r in records:
        seen.setdefault(r.dataset)
    return list(seen)


def comparison_rank_tables(
    records, tie_policy: str = TIE_HALF_WIN, neither_policy: str = NEITHER_DROP
) -> RankTables:
    """Bradley-Terry rankings per dataset and for all records pooled."""
    records = list(records)
    if not records:
        raise errors.NoRecords("no comparison records")
    per_dataset = {}
    for ds in _dataset_order(records):
        fit = fit_bradley_terry(
            [r for r in records if r.dataset == ds], tie_policy, neither_policy
        )
        per_dataset[ds] = _entries(fit.display_ratings)
    global_fit = fit_bradley_terry(records, tie_policy, neither_policy)
    return RankTables(
        kind="comparisons",
        per_dataset=per_dataset,
        global_ranking=_entries(global_fit.display_ratings),
        metadata={"tie_policy": tie_policy, "neither_policy": neither_policy},
    )


def rating_rank_tables(records) -> RankTables:
    """Mean-rating rankings per dataset and pooled over all records."""
    records = list(records)
    if not records:
        raise errors.EmptyGroup("no rating records")
    grouped = aggregate_ratings(records)
    per_dataset = {}
    for ds in _dataset_order(records):
        scores = {m: s.mean for (d, m), s in grouped.items() if d == ds}
        if len(scores) < 2:
            raise errors.NoRecords(f"dataset {ds!r} has fewer than two rated methods")
        per_dataset[ds] = _entries(scores)
    pooled = {m: s.mean for m, s in pooled_ratings(records).items()}
    if len(pooled) < 2:
        raise errors.NoRecords("ranking requires at least two methods")
    return RankTables(
        kind="ratings",
        per_dataset=per_dataset,
        global_ranking=_entries(pooled),
        metadata={"aggregation": "pooled mean over records"},
    )
