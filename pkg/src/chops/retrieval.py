"""Guide-document chunking, embedding, and exact top-K cosine retrieval.

Two retrieval profiles exist: a short one for the classifier and a long
one for the executor, so the routing step stays cheap while the answer
step sees richer context. The default encoder is a deterministic hashed
bag-of-words; an HTTP adapter plugs in an external sentence encoder for
production parity.
"""

from __future__ import annotations

import hashlib
import json
import pickle
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import requests

DEFAULT_DIMENSION = 512
CACHE_VERSION = 1


class RetrievalRole(str, Enum):
    CLASSIFIER_SHORT = "ClassifierShort"
    EXECUTOR_LONG = "ExecutorLong"


class DimensionMismatch(Exception):
    pass


@dataclass(frozen=True)
class RetrievalProfile:
    role: RetrievalRole
    window_words: int
    overlap_words: int
    k: int

    def __post_init__(self) -> None:
        if not (self.window_words > self.overlap_words >= 0):
            raise ValueError("need window_words > overlap_words >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def key(self) -> str:
        return f"{self.role.value}:{self.window_words}:{self.overlap_words}:{self.k}"


CLASSIFIER_SHORT = RetrievalProfile(RetrievalRole.CLASSIFIER_SHORT, 60, 15, 2)
EXECUTOR_LONG = RetrievalProfile(RetrievalRole.EXECUTOR_LONG, 200, 50, 4)


@dataclass(frozen=True)
class Chunk:
    chunk_id: int
    source: str
    span: tuple[int, int]  # [start, end) word indices
    text: str


class Encoder(Protocol):
    dimension: int
    encoder_id: str

    def encode(self, texts: Sequence[str]) -> np.ndarray: ...


class HashedBowEncoder:
    """Deterministic hashed bag-of-words embedding, L2-normalized.

    Tokens hash (blake2b, unsalted) to a bucket and a sign, so the same
    text always maps to the same unit vector on any platform.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        self.dimension = dimension
        self.encoder_id = f"hashed-bow-{dimension}-v1"

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for i, text in enumerate(texts):
            for token in text.lower().split():
                h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
                value = int.from_bytes(h, "big")
                bucket = value % self.dimension
                sign = 1.0 if (value >> 63) & 1 else -1.0
                out[i, bucket] += sign
            norm = np.linalg.norm(out[i])
            if norm > 0:
                out[i] /= norm
        return out


class HttpEncoder:
    """Adapter for an external embedding service: texts in, vectors out."""

    def __init__(self, url: str, dimension: int, timeout: float = 30.0):
        self.url = url
        self.dimension = dimension
        self.timeout = timeout
        self.encoder_id = f"http-{hashlib.sha256(url.encode()).hexdigest()[:12]}-{dimension}"

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        response = requests.post(self.url, json={"texts": list(texts)}, timeout=self.timeout)
        response.raise_for_status()
        vectors = np.asarray(response.json()["vectors"], dtype=np.float64)
        if vectors.shape != (len(texts), self.dimension):
            raise DimensionMismatch(f"expected ({len(texts)}, {self.dimension}), got {vectors.shape}")
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return vectors / norms


def chunk_document(
    doc: str, profile: RetrievalProfile, source: str = "guide", first_id: int = 0
) -> list[Chunk]:
    """Sliding word windows with stride = window - overlap; full coverage.

    The final window is emitted as soon as it reaches the end of the
    document, so a 500-word doc at (200, 50) gives [0,200), [150,350),
    [300,500) and nothing more.
    """
    words = doc.split()
    if not words:
        return []
    stride = profile.window_words - profile.overlap_words
    chunks: list[Chunk] = []
    start = 0
    while True:
        end = min(start + profile.window_words, len(words))
        chunks.append(
            Chunk(
                chunk_id=first_id + len(chunks),
                source=source,
                span=(start, end),
                text=" ".join(words[start:end]),
            )
        )
        if end >= len(words):
            break
        start += stride
    return chunks


@dataclass(frozen=True)
class ScoredChunk:
    chunk: Chunk
    score: float


class Index:
    """Immutable exact-scan vector index over one profile's chunks."""

    def __init__(self, chunks: Sequence[Chunk], encoder: Encoder):
        self._chunks = list(chunks)
        self._encoder = encoder
        ids = [c.chunk_id for c in self._chunks]
        if len(set(ids)) != len(ids):
            raise ValueError("chunk_id values must be unique per index")
        if self._chunks:
            self._vectors = encoder.encode([c.text for c in self._chunks])
            if self._vectors.shape[1] != encoder.dimension:
                raise DimensionMismatch(
                    f"encoder produced dimension {self._vectors.shape[1]}, "
                    f"declared {encoder.dimension}"
                )
        else:
            self._vectors = np.zeros((0, encoder.dimension), dtype=np.float64)

    def __len__(self) -> int:
        return len(self._chunks)

    @property
    def chunks(self) -> list[Chunk]:
        return list(self._chunks)

    @property
    def encoder(self) -> Encoder:
        return self._encoder

    def top_k(self, query: str, k: int) -> list[ScoredChunk]:
        """Top-k by cosine similarity, ties broken by ascending chunk_id.

        Scores are row-wise dot products rather than one matrix-vector
        product: BLAS blocking may change the summation order between the
        two, and ranking must be bitwise reproducible.
        """
        if not self._chunks or k < 1:
            return []
        query_vec = self._encoder.encode([query])[0]
        scores = [float(np.dot(row, query_vec)) for row in self._vectors]
        order = sorted(
            range(len(self._chunks)),
            key=lambda i: (-scores[i], self._chunks[i].chunk_id),
        )
        return [
            ScoredChunk(self._chunks[i], float(scores[i]))
            for i in order[: min(k, len(self._chunks))]
        ]


# --- corpus ingestion and index cache ------------------------------------------


def load_corpus(guides_dir: str | Path) -> list[tuple[str, str]]:
    """(document name, text) for every .txt file, sorted by name."""
    directory = Path(guides_dir)
    docs = []
    for path in sorted(directory.glob("*.txt")):
        docs.append((path.name, path.read_text(encoding="utf-8")))
    return docs


def corpus_digest(docs: Sequence[tuple[str, str]]) -> str:
    hasher = hashlib.sha256()
    for name, text in docs:
        hasher.update(name.encode("utf-8"))
        hasher.update(text.encode("utf-8"))
    return hasher.hexdigest()


def build_index_from_corpus(
    docs: Sequence[tuple[str, str]], profile: RetrievalProfile, encoder: Encoder
) -> Index:
    chunks: list[Chunk] = []
    for name, text in docs:
        chunks.extend(chunk_document(text, profile, source=name, first_id=len(chunks)))
    return Index(chunks, encoder)


class IndexCache:
    """Binary index cache keyed by (encoder id, profile, corpus digest)."""

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _key(self, encoder: Encoder, profile: RetrievalProfile, digest: str) -> str:
        raw = json.dumps([CACHE_VERSION, encoder.encoder_id, profile.key(), digest])
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:24]

    def load_or_build(
        self,
        docs: Sequence[tuple[str, str]],
        profile: RetrievalProfile,
        encoder: Encoder,
    ) -> tuple[Index, bool]:
        """Returns (index, was_cached). Any key change invalidates the cache."""
        digest = corpus_digest(docs)
        path = self.cache_dir / f"index-{self._key(encoder, profile, digest)}.pkl"
        if path.exists():
            with path.open("rb") as fh:
                payload = pickle.load(fh)
            index = Index.__new__(Index)
            index._chunks = payload["chunks"]
            index._encoder = encoder
            index._vectors = payload["vectors"]
            return index, True
        index = build_index_from_corpus(docs, profile, encoder)
        with path.open("wb") as fh:
            pickle.dump({"chunks": index.chunks, "vectors": index._vectors}, fh)
        return index, False
