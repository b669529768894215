"""Knowledge-graph data model: triples with provenance, alias maps, stats, JSON I/O.

Graphs are immutable value objects. Labels are compared by exact equality
after Unicode NFC normalization; the aggregation stage additionally
lowercases them, but the data model itself accepts any non-empty label so
graphs produced by other tools can be loaded and evaluated.
"""

from __future__ import annotations

import json
import logging
import math
import unicodedata
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .errors import GraphParseError, SchemaVersionError, ValidationError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

# Entity and predicate labels are plain strings; see normalize_label for the
# canonical form they are stored in.
EntityLabel = str


def normalize_label(text: str) -> str:
    """NFC-normalize and trim a label; raises ValidationError if empty."""
    normalized = unicodedata.normalize("NFC", text).strip()
    if not normalized:
        raise ValidationError(f"label is empty after trimming: {text!r}")
    return normalized


@dataclass(frozen=True, order=True)
class Triple:
    """One subject-predicate-object assertion, optionally tied to a source chunk."""

    subject: EntityLabel
    predicate: str
    object: EntityLabel
    source_chunk: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "subject", normalize_label(self.subject))
        object.__setattr__(self, "object", normalize_label(self.object))
        object.__setattr__(self, "predicate", normalize_label(self.predicate))
        if len(self.predicate.split()) > 3:
            # Long predicates are legal but defeat relation reuse; surface them.
            logger.warning("predicate longer than 3 words: %r", self.predicate)

    def spo(self) -> tuple[str, str, str]:
        return (self.subject, self.predicate, self.object)

    def rendered(self, separator: str = " ") -> str:
        """Plain-text rendering used for retrieval scoring and judge contexts."""
        return separator.join(self.spo())


@dataclass(frozen=True)
class ClusterMap:
    """A partition of labels into alias groups, one canonical representative each.

    ``clusters`` maps canonical label -> frozenset of member labels. Labels not
    present in any group are implicitly singletons mapped to themselves.
    """

    clusters: Mapping[str, frozenset[str]]
    domain: str  # "entities" or "predicates"

    def __post_init__(self):
        if self.domain not in ("entities", "predicates"):
            raise ValidationError(f"unknown cluster-map domain: {self.domain!r}")
        object.__setattr__(self, "clusters", dict(self.clusters))
        seen: set[str] = set()
        for canonical, members in self.clusters.items():
            if not members:
                raise ValidationError(f"cluster {canonical!r} is empty")
            if canonical not in members:
                raise ValidationError(
                    f"canonical {canonical!r} is not a member of its own cluster"
                )
            overlap = seen & members
            if overlap:
                raise ValidationError(
                    f"cluster members are not disjoint: {sorted(overlap)}"
                )
            seen |= members

    @property
    def members(self) -> frozenset[str]:
        """All labels covered by some alias group."""
        out: set[str] = set()
        for group in self.clusters.values():
            out |= group
        return frozenset(out)

    def canonical_for(self, label: str) -> str:
        """Total mapping: the canonical for clustered labels, identity otherwise."""
        for canonical, group in self.clusters.items():
            if label in group:
                return canonical
        return label

    def to_jsonable(self) -> dict[str, list[str]]:
        return {c: sorted(g) for c, g in sorted(self.clusters.items())}

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Iterable[str]], domain: str) -> "ClusterMap":
        return cls({c: frozenset(g) for c, g in data.items()}, domain)


def empty_cluster_map(domain: str) -> ClusterMap:
    return ClusterMap({}, domain)


@dataclass(frozen=True)
class KnowledgeGraph:
    """Entities, predicate vocabulary, provenance-tagged triples, and chunk texts."""

    entities: frozenset[str] = frozenset()
    relations: frozenset[str] = frozenset()
    triples: frozenset[Triple] = frozenset()
    chunk_table: Mapping[str, str] = field(default_factory=dict)
    cluster_maps: Mapping[str, ClusterMap] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "chunk_table", dict(self.chunk_table))
        object.__setattr__(self, "cluster_maps", dict(self.cluster_maps))

    def validate(self, provenance_required: bool = False) -> None:
        """Check structural invariants; raises ValidationError on the first breach."""
        for t in self.triples:
            if t.subject not in self.entities or t.object not in self.entities:
                raise ValidationError(f"triple endpoint missing from entities: {t}")
            if t.predicate not in self.relations:
                raise ValidationError(f"triple predicate missing from relations: {t}")
            if t.source_chunk is not None and t.source_chunk not in self.chunk_table:
                raise ValidationError(
                    f"triple references unknown chunk {t.source_chunk!r}"
                )
            if provenance_required and t.source_chunk is None:
                raise ValidationError(f"triple lacks chunk provenance: {t}")

    def distinct_assertions(self) -> frozenset[tuple[str, str, str]]:
        """Distinct (subject, predicate, object) tuples, provenance ignored."""
        return frozenset(t.spo() for t in self.triples)

    def has_full_provenance(self) -> bool:
        return bool(self.triples) and all(t.source_chunk is not None for t in self.triples)

    def neighbors(self) -> dict[str, set[str]]:
        """Undirected entity adjacency over distinct assertions."""
        adjacency: dict[str, set[str]] = {e: set() for e in self.entities}
        for s, _, o in self.distinct_assertions():
            adjacency[s].add(o)
            adjacency[o].add(s)
        return adjacency


def empty_graph() -> KnowledgeGraph:
    return KnowledgeGraph()


def add_triple(graph: KnowledgeGraph, triple: Triple) -> KnowledgeGraph:
    """Return a new graph extended with ``triple``; duplicates are no-ops."""
    if triple in graph.triples:
        return graph
    chunk_table = dict(graph.chunk_table)
    if triple.source_chunk is not None and triple.source_chunk not in chunk_table:
        chunk_table[triple.source_chunk] = ""
    return replace(
        graph,
        entities=graph.entities | {triple.subject, triple.object},
        relations=graph.relations | {triple.predicate},
        triples=graph.triples | {triple},
        chunk_table=chunk_table,
    )


def build_graph(
    triples: Iterable[Triple],
    extra_entities: Iterable[str] = (),
    chunk_table: Mapping[str, str] | None = None,
) -> KnowledgeGraph:
    """Construct a graph whose entity/relation sets cover the given triples."""
    triple_set = frozenset(triples)
    entities = {label for t in triple_set for label in (t.subject, t.object)}
    entities.update(normalize_label(e) for e in extra_entities)
    relations = {t.predicate for t in triple_set}
    table = dict(chunk_table or {})
    for t in triple_set:
        if t.source_chunk is not None:
            table.setdefault(t.source_chunk, "")
    return KnowledgeGraph(
        entities=frozenset(entities),
        relations=frozenset(relations),
        triples=triple_set,
        chunk_table=table,
    )


@dataclass(frozen=True)
class GraphStats:
    """Size and de-duplication metrics for a resolved graph versus its input."""

    entity_count: int
    relation_type_count: int
    edge_count: int
    edge_reuse: float
    dedup_ratio_entities: float
    dedup_ratio_edges: float
    degenerate: bool = False

    def to_jsonable(self) -> dict:
        return {
            "entity_count": self.entity_count,
            "relation_type_count": self.relation_type_count,
            "edge_count": self.edge_count,
            "edge_reuse": self.edge_reuse,
            "dedup_ratio_entities": self.dedup_ratio_entities,
            "dedup_ratio_edges": self.dedup_ratio_edges,
            "degenerate": self.degenerate,
        }


def compute_stats(graph_pre: KnowledgeGraph, graph_post: KnowledgeGraph) -> GraphStats:
    """De-dup ratios (post/pre) plus edge reuse on the resolved graph.

    Edges are counted as distinct (subject, predicate, object) tuples; the same
    assertion recorded from several chunks counts once. A zero pre-count is a
    degenerate corpus: the ratio is reported as 1.0 and flagged.
    """
    pre_entities = len(graph_pre.entities)
    pre_edges = len(graph_pre.distinct_assertions())
    post_entities = len(graph_post.entities)
    post_edges = len(graph_post.distinct_assertions())
    relation_types = len(graph_post.relations)

    degenerate = pre_entities == 0 or pre_edges == 0
    entity_ratio = post_entities / pre_entities if pre_entities else 1.0
    edge_ratio = post_edges / pre_edges if pre_edges else 1.0
    edge_reuse = post_edges / relation_types if relation_types else 0.0

    return GraphStats(
        entity_count=post_entities,
        relation_type_count=relation_types,
        edge_count=post_edges,
        edge_reuse=edge_reuse,
        dedup_ratio_entities=entity_ratio,
        dedup_ratio_edges=edge_ratio,
        degenerate=degenerate,
    )


def _triple_sort_key(t: Triple) -> tuple:
    return (t.subject, t.predicate, t.object, t.source_chunk or "")


def to_jsonable(graph: KnowledgeGraph) -> dict:
    """Order-normalized plain-dict form of a graph (stable for golden files)."""
    return {
        "format_version": FORMAT_VERSION,
        "entities": sorted(graph.entities),
        "relations": sorted(graph.relations),
        "triples": [
            [t.subject, t.predicate, t.object, t.source_chunk]
            for t in sorted(graph.triples, key=_triple_sort_key)
        ],
        "chunks": {k: graph.chunk_table[k] for k in sorted(graph.chunk_table)},
        "cluster_maps": {
            domain: graph.cluster_maps[domain].to_jsonable()
            for domain in sorted(graph.cluster_maps)
        },
    }


def serialize(graph: KnowledgeGraph) -> bytes:
    """UTF-8 JSON bytes; sorted throughout so re-serialization is byte-identical."""
    text = json.dumps(to_jsonable(graph), ensure_ascii=False, indent=2, sort_keys=True)
    return (text + "\n").encode("utf-8")


def from_jsonable(data: dict) -> KnowledgeGraph:
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise SchemaVersionError(
            f"unsupported graph format_version {version!r}; this build reads "
            f"version {FORMAT_VERSION} and has no migration for older files"
        )
    try:
        triples = frozenset(
            Triple(s, p, o, chunk) for s, p, o, chunk in data["triples"]
        )
        graph = KnowledgeGraph(
            entities=frozenset(data["entities"]),
            relations=frozenset(data["relations"]),
            triples=triples,
            chunk_table=dict(data["chunks"]),
            cluster_maps={
                domain: ClusterMap.from_jsonable(mapping, domain)
                for domain, mapping in data.get("cluster_maps", {}).items()
            },
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphParseError(f"malformed graph document: {exc}") from exc
    graph.validate()
    return graph


def deserialize(payload: bytes) -> KnowledgeGraph:
    """Parse graph bytes; malformed input raises GraphParseError with a byte offset."""
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise GraphParseError(f"not valid UTF-8: {exc}", byte_offset=exc.start) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise GraphParseError(
            f"invalid JSON at byte {offset}: {exc.msg}", byte_offset=offset
        ) from exc
    if not isinstance(data, dict):
        raise GraphParseError("graph document must be a JSON object")
    return from_jsonable(data)


def edge_reuse_ratio(graph: KnowledgeGraph) -> float:
    """Distinct assertions divided by relation-type count (0.0 for no relations)."""
    relation_types = len(graph.relations)
    if relation_types == 0:
        return 0.0
    return len(graph.distinct_assertions()) / relation_types


def round_ratio(value: float, places: int = 3) -> float:
    """Half-up rounding used when quoting de-dup ratios."""
    factor = 10**places
    return math.floor(value * factor + 0.5) / factor
