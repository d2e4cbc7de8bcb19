from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chops.retrieval import (
    CLASSIFIER_SHORT,
    HttpEncoder,
    EXECUTOR_LONG,
    Chunk,
    DimensionMismatch,
    HashedBowEncoder,
    Index,
    IndexCache,
    RetrievalProfile,
    RetrievalRole,
    build_index_from_corpus,
    chunk_document,
    corpus_digest,
    load_corpus,
)

WORDS = [
    "upload", "marking", "exam", "student", "photo", "deadline", "score", "guide",
    "tab", "program", "leader", "sheet", "page", "result", "prize", "school",
]


def random_text(rng: random.Random, n_words: int) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(n_words))


def brute_force_rank(chunks, vectors, query_vec, k):
    """Independent oracle: plain cosine over every chunk, sorted by
    (-score, chunk_id), truncated to k. No shared code with Index.top_k."""
    scored = []
    for chunk, vec in zip(chunks, vectors):
        scored.append((-float(np.dot(vec, query_vec)), chunk.chunk_id))
    scored.sort()
    return [(chunk_id, -neg) for neg, chunk_id in scored[:k]]


def test_chunk_empty_document():
    assert chunk_document("", EXECUTOR_LONG) == []


def test_chunk_500_words_stride_arithmetic():
    doc = " ".join(f"w{i}" for i in range(500))
    profile = RetrievalProfile(RetrievalRole.EXECUTOR_LONG, 200, 50, 4)
    chunks = chunk_document(doc, profile)
    assert [c.span for c in chunks] == [(0, 200), (150, 350), (300, 500)]


def test_chunk_short_document_single_window():
    chunks = chunk_document("a b c", EXECUTOR_LONG)
    assert len(chunks) == 1
    assert chunks[0].span == (0, 3)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(min_value=0, max_value=700),
    st.integers(min_value=2, max_value=220),
    st.integers(min_value=0, max_value=100),
)
def test_chunk_full_coverage_property(n_words, window, overlap):
    if overlap >= window:
        overlap = window - 1
    profile = RetrievalProfile(RetrievalRole.EXECUTOR_LONG, window, overlap, 1)
    doc = " ".join(f"w{i}" for i in range(n_words))
    chunks = chunk_document(doc, profile)
    covered = set()
    for chunk in chunks:
        start, end = chunk.span
        assert start < end
        covered.update(range(start, end))
        assert chunk.text == " ".join(f"w{i}" for i in range(start, end))
    assert covered == set(range(n_words))


def test_encoder_deterministic_unit_norm():
    encoder = HashedBowEncoder(512)
    v1 = encoder.encode(["upload the answer sheets"])
    v2 = encoder.encode(["upload the answer sheets"])
    assert np.array_equal(v1, v2)
    assert abs(np.linalg.norm(v1[0]) - 1.0) < 1e-6


def test_empty_index_returns_empty():
    index = Index([], HashedBowEncoder(64))
    assert index.top_k("anything", 5) == []


def test_identical_query_ranks_first_with_unit_score():
    rng = random.Random(0)
    chunks = [
        Chunk(i, "doc", (i, i + 1), random_text(rng, 12)) for i in range(20)
    ]
    index = Index(chunks, HashedBowEncoder(256))
    target = chunks[7].text
    ranked = index.top_k(target, 3)
    assert ranked[0].chunk.chunk_id == 7
    assert ranked[0].score == pytest.approx(1.0, abs=1e-6)


def test_k_larger_than_index_returns_all_sorted():
    rng = random.Random(1)
    chunks = [Chunk(i, "doc", (i, i + 1), random_text(rng, 8)) for i in range(5)]
    index = Index(chunks, HashedBowEncoder(128))
    ranked = index.top_k("upload exam", 50)
    assert len(ranked) == 5
    scores = [r.score for r in ranked]
    assert scores == sorted(scores, reverse=True)


def test_rebuild_gives_identical_results():
    rng = random.Random(2)
    chunks = [Chunk(i, "doc", (i, i + 1), random_text(rng, 10)) for i in range(30)]
    encoder = HashedBowEncoder(128)
    a = Index(chunks, encoder)
    b = Index(chunks, encoder)
    for query in ["upload", "marking deadline", "prize school"]:
        assert [(r.chunk.chunk_id, r.score) for r in a.top_k(query, 7)] == [
            (r.chunk.chunk_id, r.score) for r in b.top_k(query, 7)
        ]


def test_oracle_equivalence_100_chunks_20_queries():
    rng = random.Random(42)
    encoder = HashedBowEncoder(512)
    chunks = [Chunk(i, "doc", (i, i + 1), random_text(rng, rng.randint(4, 25))) for i in range(100)]
    index = Index(chunks, encoder)
    vectors = encoder.encode([c.text for c in chunks])
    for _ in range(20):
        query = random_text(rng, rng.randint(1, 8))
        query_vec = encoder.encode([query])[0]
        k = rng.randint(1, 100)
        expected = brute_force_rank(chunks, vectors, query_vec, k)
        got = [(r.chunk.chunk_id, r.score) for r in index.top_k(query, k)]
        assert [g[0] for g in got] == [e[0] for e in expected]
        for (gid, gscore), (eid, escore) in zip(got, expected):
            assert gscore == pytest.approx(escore, abs=1e-12)


def test_queries_are_pure_under_interleaving():
    rng = random.Random(3)
    chunks = [Chunk(i, "doc", (i, i + 1), random_text(rng, 10)) for i in range(40)]
    index = Index(chunks, HashedBowEncoder(128))
    first = [(r.chunk.chunk_id, r.score) for r in index.top_k("upload exam", 5)]
    index.top_k("marking", 3)
    index.top_k("prize", 9)
    again = [(r.chunk.chunk_id, r.score) for r in index.top_k("upload exam", 5)]
    assert first == again


def test_short_context_smaller_than_long_on_fixture(fixtures_dir):
    docs = load_corpus(fixtures_dir / "guides")
    encoder = HashedBowEncoder(512)
    short_index = build_index_from_corpus(docs, CLASSIFIER_SHORT, encoder)
    long_index = build_index_from_corpus(docs, EXECUTOR_LONG, encoder)
    query = "How do I upload answer sheets for my students?"
    short_chars = sum(len(r.chunk.text) for r in short_index.top_k(query, CLASSIFIER_SHORT.k))
    long_chars = sum(len(r.chunk.text) for r in long_index.top_k(query, EXECUTOR_LONG.k))
    assert short_chars < long_chars


def test_fixture_guide_fully_covered(fixtures_dir):
    text = (fixtures_dir / "guides" / "guide.txt").read_text(encoding="utf-8")
    n_words = len(text.split())
    chunks = chunk_document(text, EXECUTOR_LONG)
    covered = set()
    for chunk in chunks:
        covered.update(range(*chunk.span))
    assert covered == set(range(n_words))
    assert len(chunks) == len(build_index_from_corpus([("guide.txt", text)], EXECUTOR_LONG, HashedBowEncoder(64)).chunks)


def test_profile_invariants():
    with pytest.raises(ValueError):
        RetrievalProfile(RetrievalRole.CLASSIFIER_SHORT, 10, 10, 1)
    with pytest.raises(ValueError):
        RetrievalProfile(RetrievalRole.CLASSIFIER_SHORT, 10, 2, 0)
    assert CLASSIFIER_SHORT.window_words < EXECUTOR_LONG.window_words


def test_index_cache_roundtrip_and_invalidation(tmp_path, fixtures_dir):
    docs = load_corpus(fixtures_dir / "guides")
    encoder = HashedBowEncoder(128)
    cache = IndexCache(tmp_path)
    first, was_cached = cache.load_or_build(docs, CLASSIFIER_SHORT, encoder)
    assert was_cached is False
    second, was_cached = cache.load_or_build(docs, CLASSIFIER_SHORT, encoder)
    assert was_cached is True
    query = "upload answer sheets"
    assert [(r.chunk.chunk_id, r.score) for r in first.top_k(query, 4)] == [
        (r.chunk.chunk_id, r.score) for r in second.top_k(query, 4)
    ]
    # any key change invalidates: different corpus digest
    altered = [(name, text + " extra") for name, text in docs]
    assert corpus_digest(altered) != corpus_digest(docs)
    _, was_cached = cache.load_or_build(altered, CLASSIFIER_SHORT, encoder)
    assert was_cached is False


class _WrongDimensionEncoder:
    dimension = 8
    encoder_id = "wrong-dim"

    def encode(self, texts):
        return np.zeros((len(texts), 4))


def test_dimension_mismatch():
    chunks = [Chunk(0, "doc", (0, 1), "word")]
    with pytest.raises(DimensionMismatch):
        Index(chunks, _WrongDimensionEncoder())


def test_http_encoder_adapter(monkeypatch):
    class _FakeResponse:
        def __init__(self, vectors):
            self._vectors = vectors

        def raise_for_status(self):
            pass

        def json(self):
            return {"vectors": self._vectors}

    def fake_post(url, json=None, timeout=None):
        # constant unnormalized vectors; the adapter must L2-normalize
        return _FakeResponse([[3.0, 4.0] for _ in json["texts"]])

    monkeypatch.setattr("chops.retrieval.requests.post", fake_post)
    encoder = HttpEncoder("https://embed.example.test", dimension=2)
    vectors = encoder.encode(["a", "b"])
    assert vectors.shape == (2, 2)
    assert np.allclose(np.linalg.norm(vectors, axis=1), 1.0)
    assert np.allclose(vectors[0], [0.6, 0.8])


def test_http_encoder_dimension_mismatch(monkeypatch):
    class _FakeResponse:
        def raise_for_status(self):
            pass

        def json(self):
            return {"vectors": [[1.0, 2.0, 3.0]]}

    monkeypatch.setattr(
        "chops.retrieval.requests.post", lambda url, json=None, timeout=None: _FakeResponse()
    )
    encoder = HttpEncoder("https://embed.example.test", dimension=2)
    with pytest.raises(DimensionMismatch):
        encoder.encode(["a"])
