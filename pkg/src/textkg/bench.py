"""Fact-retention and RAG-accuracy benchmarks for graphs in the package format.

The fact-retention protocol scores how much of an article a graph captured:
for each of the article's 15 reference facts, the most similar nodes are
retrieved, expanded to their two-hop neighborhood, and a binary judge decides
whether the fact can be inferred from the induced subgraph. An article's
score is the percentage of facts judged recoverable.

The RAG protocol targets provenance-tagged graphs: each question retrieves
the top-10 triples by fused BM25/cosine score plus up to 10 more triples
within two hops, an answer is synthesized from the triples and their source
chunks, and a judge checks the answer against the expected one.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigurationError, ValidationError
from .gateway import ModelGateway
from .graph import KnowledgeGraph
from .index import Embedder, cosine, embed, score_candidates
from .prompts import prompt_digest

logger = logging.getLogger(__name__)

FACTS_PER_ARTICLE = 15
HISTOGRAM_BUCKET_WIDTH = 10
TRIPLE_SEPARATOR = " — "  # rendering used in judge contexts: "s — p — o"


@dataclass(frozen=True)
class ArticleFixture:
    """One benchmark article with its 15 manually verified reference facts."""

    article_id: str
    title: str
    text: str
    facts: tuple[str, ...]

    def __post_init__(self):
        if len(self.facts) != FACTS_PER_ARTICLE:
            raise ValidationError(
                f"article {self.article_id!r} must carry exactly "
                f"{FACTS_PER_ARTICLE} facts, got {len(self.facts)}"
            )
        if any(not f.strip() for f in self.facts):
            raise ValidationError(f"article {self.article_id!r} has an empty fact")

    @classmethod
    def from_jsonable(cls, data: dict) -> "ArticleFixture":
        return cls(
            article_id=str(data["id"]),
            title=data.get("title", ""),
            text=data["text"],
            facts=tuple(data["facts"]),
        )


@dataclass(frozen=True)
class BenchParams:
    node_top_k: int = 5
    hop_radius: int = 2
    triple_top_k: int = 10
    expansion_count: int = 10

    def __post_init__(self):
        if self.node_top_k < 1:
            raise ValidationError("node_top_k must be >= 1")
        if self.hop_radius != 2:
            raise ValidationError("hop_radius is fixed at 2")


@dataclass(frozen=True)
class FactSubgraph:
    """Retrieval result for one fact: seeds, expanded nodes, induced triples."""

    seed_nodes: tuple[str, ...]
    nodes: tuple[str, ...]
    triples: tuple[tuple[str, str, str], ...]

    def rendered_context(self) -> str:
        lines = [f"Entities: {', '.join(self.nodes)}"]
        lines.extend(TRIPLE_SEPARATOR.join(spo) for spo in self.triples)
        return "\n".join(lines)


def _hop_distances(
    graph: KnowledgeGraph, seeds: Iterable[str], radius: int
) -> dict[str, int]:
    """BFS over the undirected entity adjacency, out to ``radius`` hops."""
    adjacency = graph.neighbors()
    distances = {node: 0 for node in seeds}
    frontier = list(distances)
    for hop in range(1, radius + 1):
        next_frontier = []
        for node in frontier:
            for neighbor in adjacency.get(node, ()):
                if neighbor not in distances:
                    distances[neighbor] = hop
                    next_frontier.append(neighbor)
        frontier = next_frontier
    return distances


def retrieve_for_fact(
    graph: KnowledgeGraph, fact: str, params: BenchParams, embedder: Embedder
) -> FactSubgraph:
    """Top-k nodes by cosine, expanded two hops, with the induced triples."""
    if not graph.entities:
        logger.warning("retrieving from an empty graph; returning an empty subgraph")
        return FactSubgraph(seed_nodes=(), nodes=(), triples=())

    labels = sorted(graph.entities)
    vectors = embed([fact] + labels, embedder)
    fact_vec, label_vecs = vectors[0], vectors[1:]
    scored = sorted(
        ((label, cosine(fact_vec, label_vecs[i])) for i, label in enumerate(labels)),
        key=lambda pair: (-pair[1], pair[0]),
    )
    seeds = tuple(label for label, _ in scored[: params.node_top_k])

    distances = _hop_distances(graph, seeds, params.hop_radius)
    nodes = tuple(sorted(distances))
    node_set = set(nodes)
    triples = tuple(
        sorted(
            spo
            for spo in graph.distinct_assertions()
            if spo[0] in node_set and spo[2] in node_set
        )
    )
    return FactSubgraph(seed_nodes=seeds, nodes=nodes, triples=triples)


@dataclass(frozen=True)
class ArticleReport:
    article_id: str
    verdicts: tuple[int, ...]
    score: float  # percentage of facts judged recoverable

    def to_jsonable(self) -> dict:
        return {
            "article_id": self.article_id,
            "verdicts": list(self.verdicts),
            "score": self.score,
        }


def mine1_score(
    graph: KnowledgeGraph,
    fixture: ArticleFixture,
    params: BenchParams,
    gateway: ModelGateway,
    embedder: Embedder,
) -> ArticleReport:
    """Judge all 15 facts of one article against its graph's retrieved subgraphs."""
    verdicts = []
    for fact in fixture.facts:
        subgraph = retrieve_for_fact(graph, fact, params, embedder)
        context = subgraph.rendered_context()
        if not subgraph.nodes:
            verdicts.append(0)
            continue
        verdicts.append(gateway.judge_fact(fact, context).value)
    score = 100.0 * sum(verdicts) / FACTS_PER_ARTICLE
    return ArticleReport(
        article_id=fixture.article_id, verdicts=tuple(verdicts), score=score
    )


@dataclass
class EvalReport:
    """Per-article rows plus the aggregate mean and a 10-point histogram."""

    rows: list[ArticleReport] = field(default_factory=list)
    params: BenchParams = BenchParams()
    prompt_digest: str = ""

    @property
    def mean_score(self) -> float:
        if not self.rows:
            return 0.0
        return sum(row.score for row in self.rows) / len(self.rows)

    def to_jsonable(self) -> dict:
        return {
            "mean_score": self.mean_score,
            "article_count": len(self.rows),
            "node_top_k": self.params.node_top_k,
            "prompt_digest": self.prompt_digest,
            "rows": [row.to_jsonable() for row in sorted(self.rows, key=lambda r: r.article_id)],
            "histogram": score_histogram(self.rows),
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["article_id", "score"] + [f"fact_{i+1}" for i in range(15)])
            for row in sorted(self.rows, key=lambda r: r.article_id):
                writer.writerow([row.article_id, f"{row.score:.4f}", *row.verdicts])


def mine1_eval(
    graphs: dict[str, KnowledgeGraph],
    fixtures: Sequence[ArticleFixture],
    params: BenchParams,
    gateway: ModelGateway,
    embedder: Embedder,
) -> EvalReport:
    """Score every fixture against its per-article graph (keyed by article id)."""
    report = EvalReport(params=params, prompt_digest=prompt_digest())
    for fixture in sorted(fixtures, key=lambda f: f.article_id):
        graph = graphs.get(fixture.article_id)
        if graph is None:
            raise ValidationError(f"no graph provided for article {fixture.article_id!r}")
        report.rows.append(mine1_score(graph, fixture, params, gateway, embedder))
    return report


def score_histogram(rows: Sequence[ArticleReport]) -> list[dict]:
    """Fixed 10-point buckets over [0, 100]; counts sum to the article count."""
    buckets = [
        {"lo": lo, "hi": lo + HISTOGRAM_BUCKET_WIDTH, "count": 0}
        for lo in range(0, 100, HISTOGRAM_BUCKET_WIDTH)
    ]
    for row in rows:
        index = min(int(row.score // HISTOGRAM_BUCKET_WIDTH), len(buckets) - 1)
        buckets[index]["count"] += 1
    return buckets


def write_histogram_csv(rows: Sequence[ArticleReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bucket_lo", "bucket_hi", "count"])
        for bucket in score_histogram(rows):
            writer.writerow([bucket["lo"], bucket["hi"], bucket["count"]])


# ------------------------------------------------------------------- RAG


@dataclass(frozen=True)
class RetrievedTriple:
    spo: tuple[str, str, str]
    fused: float
    hop: int  # 0 for a top-ranked triple, else distance of its nearest endpoint

    def rendered(self) -> str:
        return " ".join(self.spo)


@dataclass(frozen=True)
class Mine2Retrieval:
    """Top triples plus two-hop expansion, with deduplicated source chunks."""

    triples: tuple[RetrievedTriple, ...]
    chunk_texts: tuple[str, ...]

    def triples_text(self) -> str:
        return "\n".join(t.rendered() for t in self.triples)

    def text_block(self) -> str:
        return "\n\n".join(self.chunk_texts)


def mine2_retrieve(
    graph: KnowledgeGraph,
    question: str,
    params: BenchParams,
    embedder: Embedder,
) -> Mine2Retrieval:
    """Fused top-10 triples plus up to 10 more within two hops of their nodes."""
    if not graph.has_full_provenance():
        raise ConfigurationError(
            "RAG retrieval requires a graph whose triples all carry chunk provenance"
        )
    assertions = sorted(graph.distinct_assertions())
    renderings = [" ".join(spo) for spo in assertions]
    scored = score_candidates(question, renderings, embedder)
    fused = [candidate.fused for candidate in scored]

    ranked = sorted(range(len(assertions)), key=lambda i: (-fused[i], renderings[i]))
    top_indices = ranked[: params.triple_top_k]
    top_set = set(top_indices)

    seeds = {node for i in top_indices for node in (assertions[i][0], assertions[i][2])}
    distances = _hop_distances(graph, sorted(seeds), params.hop_radius)

    expansion_candidates = []
    for i in ranked:
        if i in top_set:
            continue
        s, _, o = assertions[i]
        if s in distances and o in distances:
            hop = min(distances[s], distances[o])
            expansion_candidates.append((hop, -fused[i], renderings[i], i))
    expansion_candidates.sort()
    expansion = [i for _, _, _, i in expansion_candidates[: params.expansion_count]]

    selected = [
        RetrievedTriple(spo=assertions[i], fused=fused[i], hop=0)
        for i in top_indices
    ]
    selected.extend(
        RetrievedTriple(
            spo=assertions[i],
            fused=fused[i],
            hop=min(distances[assertions[i][0]], distances[assertions[i][2]]),
        )
        for i in expansion
    )

    chunk_ids: list[str] = []
    by_spo: dict[tuple[str, str, str], list[str]] = {}
    for t in graph.triples:
        by_spo.setdefault(t.spo(), []).append(t.source_chunk)
    for retrieved in selected:
        for chunk_id in sorted(by_spo.get(retrieved.spo, [])):
            if chunk_id not in chunk_ids:
                chunk_ids.append(chunk_id)
    chunk_texts = tuple(graph.chunk_table[cid] for cid in chunk_ids)

    return Mine2Retrieval(triples=tuple(selected), chunk_texts=chunk_texts)


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str


@dataclass
class Mine2Report:
    verdicts: list[dict] = field(default_factory=list)
    prompt_digest: str = ""

    @property
    def accuracy(self) -> float:
        if not self.verdicts:
            return 0.0
        yes = sum(1 for v in self.verdicts if v["verdict"] == "yes")
        return 100.0 * yes / len(self.verdicts)

    def to_jsonable(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "question_count": len(self.verdicts),
            "prompt_digest": self.prompt_digest,
            "verdicts": self.verdicts,
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["question", "expected", "verdict"])
            for row in self.verdicts:
                writer.writerow([row["question"], row["expected"], row["verdict"]])


def mine2_eval(
    graph: KnowledgeGraph,
    qa_pairs: Sequence[QAPair],
    params: BenchParams,
    gateway: ModelGateway,
    embedder: Embedder,
) -> Mine2Report:
    """Answer each question from retrieved triples + chunks, then judge it."""
    if not qa_pairs:
        raise ValidationError("mine2_eval requires at least one question")
    report = Mine2Report(prompt_digest=prompt_digest())
    for pair in qa_pairs:
        retrieval = mine2_retrieve(graph, pair.question, params, embedder)
        response = gateway.answer_question(
            pair.question, retrieval.triples_text(), retrieval.text_block()
        )
        verdict = gateway.judge_answer(pair.question, pair.answer, response)
        report.verdicts.append(
            {
                "question": pair.question,
                "expected": pair.answer,
                "response": response,
                "verdict": verdict,
            }
        )
    return report


def read_fixtures(path: str | Path) -> list[ArticleFixture]:
    """Load article fixtures from a JSON list of {id, title, text, facts[15]}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [ArticleFixture.from_jsonable(row) for row in data]


def read_qa_pairs(path: str | Path) -> list[QAPair]:
    """Load QA pairs from JSON-lines rows {question, answer}."""
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        pairs.append(QAPair(question=row["question"], answer=row["answer"]))
    return pairs
