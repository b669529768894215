"""Retrieval math shared by the resolver and the benchmarks.

Covers dense embeddings (pluggable backend plus a deterministic offline
embedder), cosine similarity, seeded Lloyd's k-means with a size-derived
cluster count, Okapi BM25, and the equal-weight lexical/semantic score fusion
used for candidate retrieval.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import re
from collections import Counter
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import ConfigurationError, ModelResponseError

logger = logging.getLogger(__name__)

BM25_K1 = 1.2
BM25_B = 0.75

_TOKEN_RE = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; punctuation and whitespace are separators."""
    return _TOKEN_RE.findall(text.lower())


class Embedder(Protocol):
    """Texts in, one fixed-dimension vector per text out."""

    dim: int

    def encode(self, texts: Sequence[str]) -> np.ndarray: ...


class HashedBagEmbedder:
    """Deterministic offline embedder: hashed bag-of-tokens, L2-normalized.

    Token order does not matter by construction, identical strings always map
    to identical vectors, and no network or model weights are involved, which
    makes it the reference backend for reproducible tests and golden runs.
    """

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ConfigurationError("embedder dimension must be >= 1")
        self.dim = dim

    def _token_index(self, token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            tokens = tokenize(text)
            if not tokens:
                logger.warning("embedding empty text at position %d; zero vector", row)
                continue
            for token in tokens:
                out[row, self._token_index(token)] += 1.0
            norm = np.linalg.norm(out[row])
            if norm > 0:
                out[row] /= norm
        return out


class RemoteEmbedder:
    """HTTP JSON embedding backend: POST {model, input:[texts]} -> {data:[{embedding}]}."""

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        api_key_env: str = "",
        dim: int | None = None,
        max_retries: int = 3,
        timeout: float = 60.0,
    ):
        if not endpoint:
            raise ConfigurationError("remote embedder requires an endpoint URL")
        self.endpoint = endpoint
        self.model_name = model_name
        self.api_key_env = api_key_env
        self.dim = dim or 0
        self.max_retries = max_retries
        self.timeout = timeout

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env, "")
            if not key:
                raise ConfigurationError(
                    f"embedding API key variable {self.api_key_env} is not set"
                )
            headers["Authorization"] = f"Bearer {key}"
        payload = {"model": self.model_name, "input": list(texts)}
        last_error: Exception | None = None
        for _ in range(self.max_retries + 1):
            try:
                response = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
                response.raise_for_status()
                data = response.json()["data"]
                vectors = np.asarray([row["embedding"] for row in data], dtype=np.float64)
                if vectors.shape[0] != len(texts):
                    raise ValueError("embedding count does not match input count")
                if self.dim and vectors.shape[1] != self.dim:
                    raise ConfigurationError(
                        f"embedding backend returned dim {vectors.shape[1]}, "
                        f"expected {self.dim}"
                    )
                self.dim = vectors.shape[1]
                return vectors
            except ConfigurationError:
                raise
            except Exception as exc:  # noqa: BLE001 - retried, re-raised below
                last_error = exc
                logger.warning("embedding request failed, retrying: %s", exc)
        raise ModelResponseError(f"embedding backend failed after retries: {last_error}")


class CachingEmbedder:
    """Memoizing wrapper so repeated texts hit the backend once."""

    def __init__(self, inner: Embedder):
        self.inner = inner
        self._cache: dict[str, np.ndarray] = {}

    @property
    def dim(self) -> int:
        return self.inner.dim

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        missing = [t for t in dict.fromkeys(texts) if t not in self._cache]
        if missing:
            vectors = self.inner.encode(missing)
            for text, vector in zip(missing, vectors):
                self._cache[text] = vector
        return np.stack([self._cache[t] for t in texts]) if texts else np.zeros((0, 0))


def embed(texts: Sequence[str], backend: Embedder) -> np.ndarray:
    """Embed a batch, enforcing finite entries and a constant dimension."""
    vectors = backend.encode(texts)
    if vectors.shape[0] != len(texts):
        raise ConfigurationError("embedder returned wrong number of vectors")
    if len(texts) and not np.all(np.isfinite(vectors)):
        raise ConfigurationError("embedder returned non-finite values")
    return vectors


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; zero vectors score 0.0 with a warning."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        logger.warning("cosine of zero vector is defined as 0.0")
        return 0.0
    value = float(np.dot(a, b) / (norm_a * norm_b))
    return max(-1.0, min(1.0, value))


@dataclass(frozen=True)
class KMeansResult:
    assignments: np.ndarray  # shape (N,), cluster id per item
    centroids: np.ndarray  # shape (k, dim)
    wcss_history: tuple[float, ...]  # within-cluster sum of squares per iteration
    n_iter: int

    @property
    def cluster_count(self) -> int:
        return self.centroids.shape[0]


def _kmeans_pp_init(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = vectors.shape[0]
    centroids = np.empty((k, vectors.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = vectors[first]
    closest_sq = np.sum((vectors - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest_sq.sum()
        if total == 0.0:
            # All remaining points coincide with a chosen centroid.
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest_sq / total))
        centroids[i] = vectors[idx]
        closest_sq = np.minimum(closest_sq, np.sum((vectors - centroids[i]) ** 2, axis=1))
    return centroids


def kmeans(
    vectors: np.ndarray, cluster_size_target: int = 128, seed: int = 0, max_iter: int = 100
) -> KMeansResult:
    """Seeded Lloyd's k-means with k = ceil(N / cluster_size_target).

    Runs k-means++ initialization, then assignment/update rounds until the
    assignment reaches a fixpoint or ``max_iter`` iterations. Empty clusters
    are repaired by stealing the farthest point from the largest cluster.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] < 1:
        raise ValueError("kmeans requires a non-empty (N, dim) array")
    if cluster_size_target < 1:
        raise ValueError("cluster_size_target must be >= 1")
    n = vectors.shape[0]
    k = max(1, math.ceil(n / cluster_size_target))
    k = min(k, n)

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(vectors, k, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    wcss_history: list[float] = []

    for iteration in range(1, max_iter + 1):
        distances = np.sum((vectors[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assignments = np.argmin(distances, axis=1)

        # Repair empty clusters before accepting the assignment.
        for cluster_id in range(k):
            if np.any(new_assignments == cluster_id):
                continue
            counts = np.bincount(new_assignments, minlength=k)
            largest = int(np.argmax(counts))
            members = np.flatnonzero(new_assignments == largest)
            farthest = members[int(np.argmax(distances[members, largest]))]
            new_assignments[farthest] = cluster_id

        wcss = float(
            np.sum((vectors - centroids[new_assignments]) ** 2)
        )
        wcss_history.append(wcss)

        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for cluster_id in range(k):
            members = vectors[assignments == cluster_id]
            centroids[cluster_id] = members.mean(axis=0)

    return KMeansResult(
        assignments=assignments,
        centroids=centroids,
        wcss_history=tuple(wcss_history),
        n_iter=len(wcss_history),
    )


def bm25_scores(query: str, corpus: Sequence[str]) -> list[float]:
    """Okapi BM25 (k1=1.2, b=0.75) of ``query`` against every corpus document.

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)); each occurrence of a query
    token contributes one term to the sum.
    """
    if not corpus:
        raise ValueError("bm25_scores requires a non-empty corpus")
    doc_tokens = [tokenize(doc) for doc in corpus]
    n_docs = len(corpus)
    doc_lengths = [len(tokens) for tokens in doc_tokens]
    avgdl = sum(doc_lengths) / n_docs
    term_freqs = [Counter(tokens) for tokens in doc_tokens]
    df = Counter()
    for freqs in term_freqs:
        df.update(freqs.keys())

    query_tokens = tokenize(query)
    scores = []
    for freqs, dl in zip(term_freqs, doc_lengths):
        score = 0.0
        if avgdl > 0:
            norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl)
            for token in query_tokens:
                tf = freqs.get(token, 0)
                if tf == 0:
                    continue
                idf = math.log(1.0 + (n_docs - df[token] + 0.5) / (df[token] + 0.5))
                score += idf * tf * (BM25_K1 + 1.0) / (tf + norm)
        scores.append(score)
    return scores


@dataclass(frozen=True)
class ScoredCandidate:
    """One fused-retrieval scoring record; ``fused`` is recomputable from parts."""

    item: str
    bm25_raw: float
    bm25_norm: float
    cosine: float

    @property
    def fused(self) -> float:
        return 0.5 * self.bm25_norm + 0.5 * self.cosine


def score_candidates(
    query: str, items: Sequence[str], embedder: Embedder
) -> list[ScoredCandidate]:
    """Score every item against the query: BM25 (max-normalized) plus cosine."""
    if not items:
        return []
    raw = bm25_scores(query, items)
    max_raw = max(raw)
    query_vec = embed([query], embedder)[0]
    item_vecs = embed(list(items), embedder)
    return [
        ScoredCandidate(
            item=item,
            bm25_raw=raw[i],
            bm25_norm=raw[i] / max_raw if max_raw > 0 else 0.0,
            cosine=cosine(query_vec, item_vecs[i]),
        )
        for i, item in enumerate(items)
    ]


def fused_topk(
    query: str, items: Sequence[str], k: int, embedder: Embedder
) -> list[ScoredCandidate]:
    """Top-k items by the equal-weight fused score, ties broken by item text.

    The query string itself is excluded when it appears among the items, so an
    item never retrieves itself as its own candidate.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    candidates = [item for item in items if item != query]
    scored = score_candidates(query, candidates, embedder)
    scored.sort(key=lambda c: (-c.fused, c.item))
    return scored[:k]
