import math

import numpy as np
import pytest

from stylekit import errors
from stylekit.seeds import derive_rng
from stylekit.token_planner import (
    TokenPlan,
    _lloyd,
    _repair_empty_clusters,
    kmeans_spherical,
    load_plan,
    render_training_prompts,
    save_plan,
    select_clustered,
    select_rarest,
)

from conftest import make_vocab, unit_rows


def antipodal_bundles(rng, per_bundle=3, dim=4, spread=0.05):
    """Two tight bundles of unit vectors around +e0 and -e0 (exact f64 units)."""
    base = np.zeros(dim)
    base[0] = 1.0
    rows = []
    for sign in (1.0, -1.0):
        for _ in range(per_bundle):
            rows.append(sign * base + spread * rng.standard_normal(dim))
    rows = np.asarray(rows, dtype=np.float64)
    rows /= np.linalg.norm(rows, axis=1)[:, None]
    return rows / np.linalg.norm(rows, axis=1)[:, None]


def brute_force_two_partition(X):
    """Minimum-inertia split of unit rows into two non-empty clusters."""
    n = len(X)
    best = (math.inf, None)
    for mask in range(1, 2 ** (n - 1)):  # fix point 0 in cluster 0 to halve the search
        members = [[], []]
        for i in range(n):
            members[(mask >> i) & 1].append(i)
        if not members[0] or not members[1]:
            continue
        inertia = 0.0
        for idx in members:
            mean = X[idx].mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm == 0:
                inertia = math.inf
                break
            centroid = mean / norm
            inertia += float(np.sum(1.0 - X[idx] @ centroid))
        if inertia < best[0]:
            best = (inertia, frozenset(frozenset(m) for m in members))
    return best


# ---------------------------------------------------------------------------
# select_rarest


def test_select_rarest_takes_rank_order():
    vocab = make_vocab(["t0", "t1", "t2", "t3", "t4", "t5"])
    plan = select_rarest(vocab, 3)
    assert plan.shared_id == "t0"
    assert plan.specific_ids == ("t1", "t2", "t3")


def test_select_rarest_can_use_whole_tail():
    vocab = make_vocab(["t0", "t1", "t2"])
    plan = select_rarest(vocab, 2)
    assert plan.specific_ids == ("t1", "t2")


def test_select_rarest_needs_a_shared_token():
    vocab = make_vocab(["t0", "t1", "t2"])
    with pytest.raises(errors.VocabularyTooSmall):
        select_rarest(vocab, 3)


def test_select_rarest_is_storage_order_independent(rng):
    tokens = [f"tok{i}" for i in range(8)]
    vocab = make_vocab(tokens)
    perm = rng.permutation(8)
    from stylekit.store import TokenVocabulary

    shuffled = TokenVocabulary(tuple((tokens[i], i) for i in perm))
    assert select_rarest(vocab, 4).specific_ids == select_rarest(shuffled, 4).specific_ids


# ---------------------------------------------------------------------------
# kmeans_spherical


def test_kmeans_singleton_clusters(rng):
    X = unit_rows(rng.standard_normal((5, 3)))
    result = kmeans_spherical(X, k=5, restarts=3, seed=1)
    assert abs(result.inertia) < 1e-9
    assert sorted(result.assignments.tolist()) == sorted(set(result.assignments.tolist()))


def test_kmeans_recovers_antipodal_bundles(rng):
    X = antipodal_bundles(rng)
    want_inertia, want_partition = brute_force_two_partition(X)
    result = kmeans_spherical(X, k=2, seed=7)
    got_partition = frozenset(
        frozenset(np.flatnonzero(result.assignments == c).tolist()) for c in range(2)
    )
    assert got_partition == want_partition
    assert result.inertia == pytest.approx(want_inertia, abs=1e-9)


def test_kmeans_fixed_seed_is_bit_identical(rng):
    X = unit_rows(rng.standard_normal((12, 5)))
    a = kmeans_spherical(X, k=3, seed=42)
    b = kmeans_spherical(X, k=3, seed=42)
    assert np.array_equal(a.assignments, b.assignments)
    assert a.inertia == b.inertia
    assert a.restart_index == b.restart_index
    assert np.array_equal(a.centroids, b.centroids)


def test_kmeans_errors(rng):
    X = unit_rows(rng.standard_normal((3, 4)))
    with pytest.raises(errors.TooFewPoints):
        kmeans_spherical(X, k=4)
    same = unit_rows(np.tile([1.0, 2.0, 2.0], (4, 1)))
    with pytest.raises(errors.DegenerateInput):
        kmeans_spherical(same, k=2)
    with pytest.raises(errors.NormViolation):
        kmeans_spherical(np.ones((3, 2)), k=2)


def test_kmeans_inertia_monotone_and_centroids_unit(rng):
    for _ in range(30):
        n = int(rng.integers(4, 20))
        h = int(rng.integers(2, 8))
        k = int(rng.integers(2, min(n, 6)))
        X = unit_rows(rng.standard_normal((n, h)))
        result = kmeans_spherical(X, k=k, restarts=3, seed=int(rng.integers(1 << 30)))
        hist = result.inertia_per_iteration
        assert all(hist[i + 1] <= hist[i] + 1e-12 for i in range(len(hist) - 1))
        np.testing.assert_allclose(np.linalg.norm(result.centroids, axis=1), 1.0, atol=1e-6)
        assert np.bincount(result.assignments, minlength=k).min() >= 1


def test_kmeans_returns_minimum_inertia_restart(rng):
    X = unit_rows(rng.standard_normal((15, 4)))
    best = kmeans_spherical(X, k=4, restarts=10, seed=9)
    Xu = X.astype(np.float64)
    Xu /= np.linalg.norm(Xu, axis=1)[:, None]  # same renormalization as kmeans_spherical
    inertias = []
    for r in range(10):
        single = _lloyd(Xu, 4, 50, derive_rng(9, "kmeans", r), r)
        inertias.append(single.inertia)
    assert best.inertia == min(inertias)
    assert best.restart_index == int(np.argmin(inertias))


def test_empty_cluster_repair_restores_partition():
    X = unit_rows([[1, 0], [0.99, 0.01], [0, 1], [0.01, 0.99]]).astype(np.float64)
    centroids = unit_rows([[1, 0], [0, 1], [-1, 0]]).astype(np.float64)
    sims = X @ centroids.T
    assign = np.argmax(sims, axis=1)
    assert (np.bincount(assign, minlength=3) == 0).any()
    _repair_empty_clusters(X, centroids, sims, assign)
    assert np.bincount(assign, minlength=3).min() >= 1


# ---------------------------------------------------------------------------
# select_clustered


def test_select_clustered_single_cluster_takes_mean_direction(rng):
    emb = unit_rows([[1, 0], [0.9, 0.1], [0.9, -0.1], [0.8, 0.0], [0.0, 1.0]])
    vocab = make_vocab(["shared", "a", "b", "c", "d"], emb)
    plan = select_clustered(vocab, 1, seed=3)
    pool = emb[1:].astype(np.float64)
    centroid = pool.mean(axis=0)
    centroid /= np.linalg.norm(centroid)
    best = int(np.argmax(pool @ centroid))
    assert plan.shared_id == "shared"
    assert plan.specific_ids == (["a", "b", "c", "d"][best],)


def test_select_clustered_antipodal_fixture_matches_brute_force(rng):
    X = antipodal_bundles(rng)
    tokens = ["shared"] + [f"t{i}" for i in range(len(X))]
    emb = np.vstack([unit_rows([[0.0, 0.0, 0.0, 1.0]]), X.astype(np.float32)])
    vocab = make_vocab(tokens, emb)
    plan = select_clustered(vocab, 2, seed=11)
    _, want_partition = brute_force_two_partition(X)
    expected = set()
    for part in want_partition:
        idx = sorted(part)
        mean = X[idx].mean(axis=0)
        centroid = mean / np.linalg.norm(mean)
        sims = X[idx] @ centroid
        expected.add(f"t{idx[int(np.argmax(sims))]}")
    assert set(plan.specific_ids) == expected
    assert plan.shared_id == "shared"


def test_select_clustered_tie_prefers_lower_rank():
    # two identical embeddings in the pool: the lower rank must win
    emb = unit_rows([[0, 1], [1, 0], [1, 0], [0.9, 0.1]])
    vocab = make_vocab(["shared", "low", "high", "other"], emb)
    plan = select_clustered(vocab, 1, seed=5)
    assert "high" not in plan.specific_ids
    assert plan.n_characters == 1


def test_select_clustered_is_storage_order_invariant(rng):
    tokens = [f"tok{i}" for i in range(10)]
    emb = unit_rows(rng.standard_normal((10, 6)))
    vocab = make_vocab(tokens, emb)
    plan = select_clustered(vocab, 3, seed=21)

    perm = rng.permutation(10)
    from stylekit.store import EmbeddingMatrix, TokenVocabulary

    shuffled = TokenVocabulary(
        tuple((tokens[i], int(i)) for i in perm),
        EmbeddingMatrix(emb[perm], normalized=True),
    )
    plan2 = select_clustered(shuffled, 3, seed=21)
    assert set(plan.specific_ids) == set(plan2.specific_ids)
    assert plan.specific_ids == plan2.specific_ids  # cluster order is rank-keyed


def test_select_clustered_never_reuses_shared(rng):
    emb = unit_rows(rng.standard_normal((9, 4)))
    vocab = make_vocab([f"t{i}" for i in range(9)], emb)
    for n in (1, 2, 4):
        plan = select_clustered(vocab, n, seed=n)
        assert plan.shared_id == "t0"
        assert "t0" not in plan.specific_ids
        assert len(set(plan.specific_ids)) == n
    rare = select_rarest(vocab, 4)
    assert rare.shared_id not in rare.specific_ids


def test_select_clustered_pool_size_restricts_candidates(rng):
    emb = unit_rows(rng.standard_normal((10, 4)))
    vocab = make_vocab([f"t{i}" for i in range(10)], emb)
    plan = select_clustered(vocab, 2, seed=1, pool_size=4)
    assert set(plan.specific_ids) <= {"t1", "t2", "t3", "t4"}
    with pytest.raises(errors.VocabularyTooSmall):
        select_clustered(vocab, 5, seed=1, pool_size=4)


def test_select_clustered_requires_embeddings():
    vocab = make_vocab(["a", "b", "c"])
    with pytest.raises(errors.MissingEmbeddingSpace):
        select_clustered(vocab, 1, seed=0)


# ---------------------------------------------------------------------------
# prompts and plan files


def test_render_training_prompt_format():
    plan = TokenPlan(shared_id="zwx", specific_ids=("sks1",), class_descriptor="style")
    assert render_training_prompts(plan, ["char1"]) == ["sks1 zwx style"]


def test_render_training_prompts_empty_and_mismatch():
    empty = TokenPlan(shared_id="zwx", specific_ids=())
    assert render_training_prompts(empty, []) == []
    plan = TokenPlan(shared_id="zwx", specific_ids=("a", "b"))
    with pytest.raises(errors.LengthMismatch):
        render_training_prompts(plan, ["only_one"])


def test_plan_invariants():
    with pytest.raises(errors.MalformedRow):
        TokenPlan(shared_id="x", specific_ids=("x", "y"))
    with pytest.raises(errors.MalformedRow):
        TokenPlan(shared_id="x", specific_ids=("y", "y"))
    with pytest.raises(errors.MalformedRow):
        TokenPlan(shared_id="", specific_ids=())


def test_plan_json_round_trip(tmp_path):
    plan = TokenPlan(shared_id="zwx", specific_ids=("a", "b"), strategy="clustered", seed=42)
    path = save_plan(plan, tmp_path / "plan.json")
    assert load_plan(path) == plan
    doc = path.read_text()
    for key in ("shared_id", "specific_ids", "class", "strategy", "seed"):
        assert f'"{key}"' in doc
