"""Stage 2: merge chunk graphs into one normalized graph. No model calls.

Labels are lowercased and whitespace-collapsed before comparison, entity and
relation sets are unions across chunks, and triples keep set semantics on
(subject, predicate, object, chunk): the same assertion extracted from two
chunks is retained twice with distinct provenance.
"""

from __future__ import annotations

from typing import Sequence

from .errors import ValidationError
from .extract import ChunkGraph
from .graph import KnowledgeGraph, Triple, build_graph


def normalize_surface(label: str) -> str:
    """Lowercase and collapse internal whitespace runs to single spaces."""
    return " ".join(label.lower().split())


def aggregate(chunk_graphs: Sequence[ChunkGraph]) -> KnowledgeGraph:
    """Combine per-chunk graphs into a single lowercase-normalized graph."""
    seen_ids: set[str] = set()
    for cg in chunk_graphs:
        if cg.chunk_id in seen_ids:
            raise ValidationError(f"duplicate chunk id {cg.chunk_id!r}")
        seen_ids.add(cg.chunk_id)

    triples: set[Triple] = set()
    entities: set[str] = set()
    chunk_table: dict[str, str] = {}
    for cg in chunk_graphs:
        chunk_table[cg.chunk_id] = cg.text
        for label in cg.entities:
            normalized = normalize_surface(label)
            if normalized:
                entities.add(normalized)
        for t in cg.triples:
            triples.add(
                Triple(
                    normalize_surface(t.subject),
                    normalize_surface(t.predicate),
                    normalize_surface(t.object),
                    cg.chunk_id,
                )
            )
    return build_graph(triples, extra_entities=entities, chunk_table=chunk_table)


def graph_to_chunk_graphs(graph: KnowledgeGraph) -> list[ChunkGraph]:
    """Decompose a graph back into per-chunk graphs (inverse view of aggregate).

    Entities that appear in no triple are attached to every chunk graph (or a
    single synthetic chunk when the graph has no provenance at all) so that
    re-aggregating reproduces the original entity set.
    """
    by_chunk: dict[str | None, list[Triple]] = {}
    for t in sorted(graph.triples, key=lambda t: (t.source_chunk or "", t.spo())):
        by_chunk.setdefault(t.source_chunk, []).append(t)

    isolated = graph.entities - {
        label for t in graph.triples for label in (t.subject, t.object)
    }
    chunk_ids = sorted(graph.chunk_table) or sorted(
        cid for cid in by_chunk if cid is not None
    )
    if not chunk_ids:
        if not graph.triples and not isolated:
            return []
        chunk_ids = [""]

    out: list[ChunkGraph] = []
    for i, chunk_id in enumerate(chunk_ids):
        triples = tuple(
            Triple(t.subject, t.predicate, t.object, chunk_id)
            for t in by_chunk.get(chunk_id, [])
        )
        entity_list = [label for t in triples for label in (t.subject, t.object)]
        if i == 0:
            entity_list.extend(sorted(isolated))
        out.append(
            ChunkGraph(
                chunk_id=chunk_id,
                entities=tuple(dict.fromkeys(entity_list)),
                triples=triples,
                text=graph.chunk_table.get(chunk_id, ""),
            )
        )
    # Triples with no provenance end up attached to the first chunk view.
    untagged = by_chunk.get(None, [])
    if untagged:
        first = out[0]
        retagged = tuple(
            Triple(t.subject, t.predicate, t.object, first.chunk_id) for t in untagged
        )
        merged = tuple(dict.fromkeys(first.triples + retagged))
        entity_list = list(first.entities) + [
            label for t in retagged for label in (t.subject, t.object)
        ]
        out[0] = ChunkGraph(
            chunk_id=first.chunk_id,
            entities=tuple(dict.fromkeys(entity_list)),
            triples=merged,
            text=first.text,
        )
    return out
