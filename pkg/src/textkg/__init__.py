"""textkg: staged text-to-knowledge-graph extraction with retrieval benchmarks.

Pipeline: chunk + extract per-chunk graphs (model-backed), aggregate them into
one normalized graph (deterministic), then resolve synonymous entities and
predicates into alias clusters. Graph quality is measured with a fact-retention
benchmark and a RAG question-answering benchmark, both runnable fully offline
against the deterministic mock backend.
"""

from .aggregate import aggregate
from .bench import ArticleFixture, BenchParams, EvalReport, mine1_score, mine2_retrieve
from .extract import ChunkGraph, SourceChunk, chunk_text, generate
from .gateway import JudgeVerdict, MockBackend, ModelConfig, ModelGateway
from .graph import (
    ClusterMap,
    GraphStats,
    KnowledgeGraph,
    Triple,
    add_triple,
    build_graph,
    compute_stats,
    deserialize,
    serialize,
)
from .index import HashedBagEmbedder, bm25_scores, cosine, fused_topk, kmeans
from .resolve import ResolutionParams, apply_cluster_map, resolve

__version__ = "0.1.0"

__all__ = [
    "ArticleFixture",
    "BenchParams",
    "ChunkGraph",
    "ClusterMap",
    "EvalReport",
    "GraphStats",
    "HashedBagEmbedder",
    "JudgeVerdict",
    "KnowledgeGraph",
    "MockBackend",
    "ModelConfig",
    "ModelGateway",
    "ResolutionParams",
    "SourceChunk",
    "Triple",
    "add_triple",
    "aggregate",
    "apply_cluster_map",
    "bm25_scores",
    "build_graph",
    "chunk_text",
    "compute_stats",
    "cosine",
    "deserialize",
    "fused_topk",
    "generate",
    "kmeans",
    "mine1_score",
    "mine2_retrieve",
    "resolve",
    "serialize",
]
