"""Stage 3: merge synonymous entity and predicate labels.

Two strategies are provided. The iterative strategy repeatedly asks the model
to propose one alias cluster from the full label list, validates each proposal
with a second call, and labels accepted clusters; once proposals dry up, the
leftover labels are swept batch-by-batch against the existing clusters. The
hybrid strategy scales to large graphs: labels are embedded and partitioned
with k-means, then each partition is drained by retrieving fused
lexical/semantic candidates for one label at a time and asking the model for
its exact duplicates.

Both strategies emit ClusterMaps (a partition with one canonical label per
alias group) and a rewritten graph. Partition and non-expansion guarantees
are enforced here with post-filters regardless of what the model returns.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .errors import ModelResponseError, ValidationError
from .gateway import ENTITY_DOMAIN, PREDICATE_DOMAIN, ModelGateway
from .graph import ClusterMap, KnowledgeGraph, Triple
from .index import CachingEmbedder, Embedder, embed, fused_topk, kmeans

logger = logging.getLogger(__name__)

DEFAULT_PATIENCE = 5
DEFAULT_BATCH_SIZE = 10
DEFAULT_CLUSTER_SIZE = 128
DEFAULT_TOP_K = 16


@dataclass(frozen=True)
class ResolutionParams:
    """Knobs for both strategies; field names mirror the CLI flags."""

    strategy: str = "hybrid"
    n: int = DEFAULT_PATIENCE  # consecutive failed proposals before leaving the loop
    b: int = DEFAULT_BATCH_SIZE  # residual-assignment batch size
    cluster_size: int = DEFAULT_CLUSTER_SIZE  # target k-means cluster population
    k: int = DEFAULT_TOP_K  # fused-retrieval candidate count
    instruction: str | None = None
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.strategy not in ("iterative", "hybrid"):
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if self.n < 1 or self.b < 1:
            raise ValidationError("n and b must be >= 1")
        if self.cluster_size < 2:
            raise ValidationError("cluster_size must be >= 2")
        if self.k < 1:
            raise ValidationError("k must be >= 1")


@dataclass(frozen=True)
class ResolutionResult:
    graph: KnowledgeGraph
    entity_map: ClusterMap
    edge_map: ClusterMap


def _pick_canonical(alias: str, members: set[str]) -> str:
    """Force the canonical into the member set.

    The model's alias is used when it names a member (exactly, or up to
    case/trim); otherwise fall back to the shortest member, ties broken
    lexicographically.
    """
    if alias in members:
        return alias
    folded = alias.strip().lower()
    for member in sorted(members):
        if member.strip().lower() == folded:
            return member
    fallback = min(members, key=lambda m: (len(m), m))
    logger.warning("alias %r is not a member; using %r as canonical", alias, fallback)
    return fallback


def _degree_order(graph: KnowledgeGraph, domain: str) -> list[str]:
    """Labels ordered by descending connectivity so heavy labels resolve first."""
    counts: dict[str, int] = {}
    if domain == ENTITY_DOMAIN:
        for label in graph.entities:
            counts[label] = 0
        for s, _, o in graph.distinct_assertions():
            counts[s] += 1
            counts[o] += 1
    else:
        for label in graph.relations:
            counts[label] = 0
        for _, p, _ in graph.distinct_assertions():
            counts[p] += 1
    return sorted(counts, key=lambda label: (-counts[label], label))


# --------------------------------------------------------------- iterative


def _iterative_domain(
    labels: Sequence[str], params: ResolutionParams, gateway: ModelGateway, domain: str
) -> ClusterMap:
    remaining = sorted(labels)
    clusters: list[tuple[str, set[str]]] = []
    failures = 0

    # Proposal loop: one cluster per round until n consecutive failures.
    while len(remaining) >= 2 and failures < params.n:
        try:
            proposal = gateway.propose_cluster(remaining, params.instruction, domain)
            validated = (
                gateway.validate_cluster(proposal, domain) if len(proposal) >= 2 else []
            )
        except ModelResponseError as exc:
            logger.warning("proposal round failed (%s); counting as a miss", exc)
            failures += 1
            continue
        if len(validated) >= 2:
            label = gateway.label_cluster(validated, domain)
            members = set(validated)
            clusters.append((_pick_canonical(label, members), members))
            remaining = [x for x in remaining if x not in members]
            failures = 0
        else:
            failures += 1

    # Residual sweep: offer leftovers to existing clusters, batch by batch.
    if clusters and remaining:
        residual = list(remaining)
        for start in range(0, len(residual), params.b):
            batch = set(residual[start : start + params.b])
            for _, members in clusters:
                if not batch:
                    break
                try:
                    confirmed = gateway.validate_cluster(
                        sorted(members) + sorted(batch), domain
                    )
                except ModelResponseError:
                    continue
                additions = [x for x in sorted(batch) if x in confirmed]
                for item in additions:
                    # Each addition is validated once more on its own.
                    try:
                        recheck = gateway.validate_cluster(sorted(members) + [item], domain)
                    except ModelResponseError:
                        continue
                    if item in recheck and any(m in recheck for m in members):
                        members.add(item)
                        batch.discard(item)

    mapping = {}
    for canonical, members in clusters:
        if len(members) >= 2:
            mapping[canonical] = frozenset(members)
    return ClusterMap(mapping, domain)


def resolve_iterative(
    graph: KnowledgeGraph, params: ResolutionParams, gateway: ModelGateway
) -> ResolutionResult:
    """Model-proposed clustering with judge validation, entities then predicates."""
    if params.strategy != "iterative":
        raise ValidationError("resolve_iterative requires strategy='iterative'")
    entity_map = _iterative_domain(sorted(graph.entities), params, gateway, ENTITY_DOMAIN)
    edge_map = _iterative_domain(sorted(graph.relations), params, gateway, PREDICATE_DOMAIN)
    return ResolutionResult(
        graph=apply_cluster_map(graph, entity_map, edge_map),
        entity_map=entity_map,
        edge_map=edge_map,
    )


# ------------------------------------------------------------------ hybrid


def _drain_cluster(
    pool: list[str], params: ResolutionParams, gateway: ModelGateway,
    embedder: Embedder, domain: str,
) -> list[tuple[str, set[str]]]:
    """Resolve one k-means partition: item by item, retrieve-then-deduplicate."""
    groups: list[tuple[str, set[str]]] = []
    pending = list(pool)
    while pending:
        item = pending[0]
        candidates = [c.item for c in fused_topk(item, pending, params.k, embedder)]
        duplicates, alias = gateway.find_duplicates(item, candidates, item_type=domain)
        members = {item, *duplicates}
        if duplicates:
            groups.append((_pick_canonical(alias, members), members))
        pending = [x for x in pending if x not in members]
    return groups


def _hybrid_domain(
    graph: KnowledgeGraph, params: ResolutionParams, gateway: ModelGateway,
    embedder: Embedder, domain: str,
) -> ClusterMap:
    labels = _degree_order(graph, domain)
    if len(labels) < 2:
        return ClusterMap({}, domain)

    shared_embedder = CachingEmbedder(embedder)
    vectors = embed(labels, shared_embedder)
    assignment = kmeans(vectors, params.cluster_size, params.seed).assignments

    pools: dict[int, list[str]] = {}
    for label, cluster_id in zip(labels, assignment):
        pools.setdefault(int(cluster_id), []).append(label)
    ordered_pools = [pools[cid] for cid in sorted(pools)]

    def drain(pool: list[str]):
        return _drain_cluster(pool, params, gateway, shared_embedder, domain)

    if params.jobs <= 1 or len(ordered_pools) <= 1:
        per_pool = [drain(pool) for pool in ordered_pools]
    else:
        with ThreadPoolExecutor(max_workers=params.jobs) as executor:
            per_pool = list(executor.map(drain, ordered_pools))

    # Merge alias groups that landed in different partitions but chose the
    # same canonical; k-means can split a true synonym set.
    merged: dict[str, set[str]] = {}
    for groups in per_pool:
        for canonical, members in groups:
            merged.setdefault(canonical, set()).update(members)
    return ClusterMap({c: frozenset(m) for c, m in merged.items()}, domain)


def resolve_hybrid(
    graph: KnowledgeGraph,
    params: ResolutionParams,
    gateway: ModelGateway,
    embedder: Embedder,
) -> ResolutionResult:
    """Embedding-partitioned, retrieval-guided de-duplication for large graphs."""
    if params.strategy != "hybrid":
        raise ValidationError("resolve_hybrid requires strategy='hybrid'")
    entity_map = _hybrid_domain(graph, params, gateway, embedder, ENTITY_DOMAIN)
    edge_map = _hybrid_domain(graph, params, gateway, embedder, PREDICATE_DOMAIN)
    return ResolutionResult(
        graph=apply_cluster_map(graph, entity_map, edge_map),
        entity_map=entity_map,
        edge_map=edge_map,
    )


def resolve(
    graph: KnowledgeGraph,
    params: ResolutionParams,
    gateway: ModelGateway,
    embedder: Embedder | None = None,
) -> ResolutionResult:
    """Dispatch on params.strategy."""
    if params.strategy == "iterative":
        return resolve_iterative(graph, params, gateway)
    if embedder is None:
        raise ValidationError("hybrid resolution requires an embedder")
    return resolve_hybrid(graph, params, gateway, embedder)


# -------------------------------------------------------------- map apply


def apply_cluster_map(
    graph: KnowledgeGraph, entity_map: ClusterMap, edge_map: ClusterMap
) -> KnowledgeGraph:
    """Rewrite every triple with canonical labels and drop absorbed aliases."""
    unknown_entities = entity_map.members - graph.entities
    if unknown_entities:
        raise ValidationError(
            f"entity map references labels not in the graph: {sorted(unknown_entities)}"
        )
    unknown_relations = edge_map.members - graph.relations
    if unknown_relations:
        raise ValidationError(
            f"edge map references labels not in the graph: {sorted(unknown_relations)}"
        )

    entity_canonical = {label: entity_map.canonical_for(label) for label in graph.entities}
    predicate_canonical = {label: edge_map.canonical_for(label) for label in graph.relations}

    triples = frozenset(
        Triple(
            entity_canonical[t.subject],
            predicate_canonical[t.predicate],
            entity_canonical[t.object],
            t.source_chunk,
        )
        for t in graph.triples
    )
    return KnowledgeGraph(
        entities=frozenset(entity_canonical.values()),
        relations=frozenset(predicate_canonical.values()),
        triples=triples,
        chunk_table=graph.chunk_table,
        cluster_maps={ENTITY_DOMAIN: entity_map, PREDICATE_DOMAIN: edge_map},
    )
