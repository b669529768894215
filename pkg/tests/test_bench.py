"""Benchmark harness: subgraph retrieval oracles, scoring arithmetic, RAG path."""

from __future__ import annotations

import random

import numpy as np
import pytest

from textkg.bench import (
    ArticleFixture,
    BenchParams,
    QAPair,
    mine1_score,
    mine2_eval,
    mine2_retrieve,
    retrieve_for_fact,
    score_histogram,
)
from textkg.errors import ConfigurationError, ValidationError
from textkg.graph import Triple, build_graph, empty_graph


WORDS = ["ant", "bee", "cat", "dog", "elk", "fox", "gnu", "hen", "ibis", "jay"]


# --------------------------------------------------------------------- oracles


def _cosine_oracle(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.dot(a, b)) / denom if denom > 0 else 0.0


def retrieve_oracle(graph, fact, node_top_k, embedder):
    """Full cosine sort plus repeated edge-scan expansion, radius 2."""
    labels = sorted(graph.entities)
    fact_vec = embedder.encode([fact])[0]
    sims = [
        (label, _cosine_oracle(fact_vec, embedder.encode([label])[0]))
        for label in labels
    ]
    sims.sort(key=lambda pair: (-pair[1], pair[0]))
    seeds = [label for label, _ in sims[:node_top_k]]
    assertions = {t.spo() for t in graph.triples}
    nodes = set(seeds)
    for _ in range(2):
        reached = set(nodes)
        for s, _, o in assertions:
            if s in nodes:
                reached.add(o)
            if o in nodes:
                reached.add(s)
        nodes = reached
    triples = sorted(
        spo for spo in assertions if spo[0] in nodes and spo[2] in nodes
    )
    return seeds, sorted(nodes), triples


def mine2_oracle(graph, question, params, embedder):
    """Exhaustive fused scoring + edge-scan hop distances, fully re-derived."""
    import math
    import re

    assertions = sorted({t.spo() for t in graph.triples})
    renderings = [" ".join(spo) for spo in assertions]

    # BM25 direct form (same closed form as the index oracle).
    docs = [re.findall(r"\w+", r.lower()) for r in renderings]
    n = len(docs)
    avgdl = sum(len(d) for d in docs) / n
    raw = []
    for d in docs:
        total = 0.0
        for q in re.findall(r"\w+", question.lower()):
            tf = d.count(q)
            if tf == 0:
                continue
            df = sum(1 for other in docs if q in other)
            idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
            total += idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * len(d) / avgdl))
        raw.append(total)
    top_raw = max(raw)
    question_vec = embedder.encode([question])[0]
    fused = []
    for i, rendering in enumerate(renderings):
        cos = _cosine_oracle(question_vec, embedder.encode([rendering])[0])
        norm = raw[i] / top_raw if top_raw > 0 else 0.0
        fused.append(0.5 * norm + 0.5 * cos)

    order = sorted(range(n), key=lambda i: (-fused[i], renderings[i]))
    top = order[: params.triple_top_k]

    seeds = {x for i in top for x in (assertions[i][0], assertions[i][2])}
    distance = {node: 0 for node in seeds}
    for hop in (1, 2):
        for s, _, o in assertions:
            if s in distance and distance[s] == hop - 1 and o not in distance:
                distance[o] = hop
            if o in distance and distance[o] == hop - 1 and s not in distance:
                distance[s] = hop
    candidates = []
    for i in order:
        if i in top:
            continue
        s, _, o = assertions[i]
        if s in distance and o in distance:
            candidates.append((min(distance[s], distance[o]), -fused[i], renderings[i], i))
    candidates.sort()
    expansion = [i for *_, i in candidates[: params.expansion_count]]
    return [assertions[i] for i in top], [assertions[i] for i in expansion]


def random_graph(rng: random.Random, max_nodes: int = 50, provenance: bool = False):
    node_count = rng.randint(2, max_nodes)
    nodes = [f"{rng.choice(WORDS)}{i}" for i in range(node_count)]
    triples = []
    for _ in range(rng.randint(1, 2 * node_count)):
        chunk = f"chunk{rng.randint(0, 4)}" if provenance else None
        triples.append(
            Triple(rng.choice(nodes), rng.choice(["links", "feeds", "maps"]),
                   rng.choice(nodes), chunk)
        )
    chunk_table = (
        {f"chunk{i}": f"source text {i}" for i in range(5)} if provenance else None
    )
    return build_graph(triples, extra_entities=nodes, chunk_table=chunk_table)


# ------------------------------------------------------------------- retrieval


class TestRetrieveForFact:
    def path_graph(self):
        return build_graph(
            [Triple(a, "r", b) for a, b in zip("abcd", "bcde")]
        )

    def test_path_graph_center_reaches_everything(self, embedder):
        # Seeds {c}; two undirected hops cover a..e; all 4 edges induced.
        result = retrieve_for_fact(
            self.path_graph(), "c", BenchParams(node_top_k=1), embedder
        )
        assert result.seed_nodes == ("c",)
        assert result.nodes == ("a", "b", "c", "d", "e")
        assert len(result.triples) == 4

    def test_fact_equal_to_label_ranks_first(self, embedder):
        result = retrieve_for_fact(
            self.path_graph(), "e", BenchParams(node_top_k=1), embedder
        )
        assert result.seed_nodes[0] == "e"

    def test_top_k_larger_than_graph_seeds_everything(self, embedder):
        result = retrieve_for_fact(
            self.path_graph(), "z", BenchParams(node_top_k=99), embedder
        )
        assert set(result.seed_nodes) == set("abcde")

    def test_empty_graph_warns_and_returns_empty(self, embedder, caplog):
        with caplog.at_level("WARNING"):
            result = retrieve_for_fact(empty_graph(), "fact", BenchParams(), embedder)
        assert result.nodes == () and result.triples == ()
        assert any("empty graph" in r.message for r in caplog.records)

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_oracle_on_random_graphs(self, seed, embedder):
        rng = random.Random(seed)
        graph = random_graph(rng)
        fact = " ".join(rng.choices(WORDS, k=3))
        params = BenchParams(node_top_k=rng.randint(1, 6))
        result = retrieve_for_fact(graph, fact, params, embedder)
        seeds, nodes, triples = retrieve_oracle(graph, fact, params.node_top_k, embedder)
        assert list(result.seed_nodes) == seeds
        assert list(result.nodes) == nodes
        assert list(result.triples) == triples


class TestMine1:
    def fixture_graph(self, fact_count: int = 15):
        triples = [Triple(f"s{i}", "rel", f"o{i}") for i in range(fact_count)]
        return build_graph(triples)

    def make_fixture(self):
        facts = tuple(f"s{i} — rel — o{i}" for i in range(15))
        return ArticleFixture(article_id="a1", title="t", text="body", facts=facts)

    def test_all_facts_present_scores_100(self, gateway, embedder):
        report = mine1_score(
            self.fixture_graph(), self.make_fixture(), BenchParams(), gateway, embedder
        )
        assert report.score == 100.0
        assert report.verdicts == (1,) * 15

    def test_six_missing_facts_scores_60(self, gateway, embedder):
        # Drop the triples behind facts 9..14: 9 of 15 remain -> exactly 60.0.
        report = mine1_score(
            self.fixture_graph(fact_count=9), self.make_fixture(), BenchParams(),
            gateway, embedder,
        )
        assert report.verdicts == (1,) * 9 + (0,) * 6
        assert report.score == 60.0

    def test_empty_graph_scores_zero(self, gateway, embedder):
        report = mine1_score(
            empty_graph(), self.make_fixture(), BenchParams(), gateway, embedder
        )
        assert report.score == 0.0

    def test_score_is_monotone_in_verdicts(self, gateway, embedder):
        full = mine1_score(
            self.fixture_graph(), self.make_fixture(), BenchParams(), gateway, embedder
        )
        partial = mine1_score(
            self.fixture_graph(fact_count=14), self.make_fixture(), BenchParams(),
            gateway, embedder,
        )
        assert full.score - partial.score == pytest.approx(100 / 15, abs=1e-9)

    def test_fixture_requires_exactly_15_facts(self):
        with pytest.raises(ValidationError):
            ArticleFixture("a", "t", "x", facts=("only", "four", "facts", "here"))


class TestHistogram:
    def row(self, article_id, score):
        from textkg.bench import ArticleReport

        return ArticleReport(article_id, verdicts=(), score=score)

    def test_uniform_scores_fill_one_bucket(self):
        rows = [self.row(f"a{i}", 66.07) for i in range(100)]
        buckets = score_histogram(rows)
        assert sum(b["count"] for b in buckets) == 100
        assert [b["count"] for b in buckets if b["lo"] == 60] == [100]

    def test_empty_reports_empty_histogram(self):
        assert sum(b["count"] for b in score_histogram([])) == 0

    def test_two_articles_two_buckets(self):
        rows = [self.row("a", 50.0), self.row("b", 70.0)]
        buckets = {b["lo"]: b["count"] for b in score_histogram(rows)}
        assert buckets[50] == 1 and buckets[70] == 1

    def test_perfect_score_lands_in_top_bucket(self):
        buckets = score_histogram([self.row("a", 100.0)])
        assert buckets[-1]["count"] == 1

    def test_report_mean_is_arithmetic_mean(self):
        from textkg.bench import EvalReport

        scores = [100.0 * k / 15 for k in (3, 7, 11, 15, 0, 9)]
        report = EvalReport(rows=[self.row(f"a{i}", s) for i, s in enumerate(scores)])
        assert report.mean_score == pytest.approx(sum(scores) / len(scores), abs=1e-9)


class TestMine2Retrieve:
    def provenance_graph(self, triple_count=8):
        triples = [
            Triple(f"s{i}", "links", f"o{i}", f"chunk{i % 3}")
            for i in range(triple_count)
        ]
        chunk_table = {f"chunk{i}": f"chunk text {i}" for i in range(3)}
        return build_graph(triples, chunk_table=chunk_table)

    def test_small_graph_selects_everything_without_expansion(self, embedder):
        graph = self.provenance_graph(triple_count=8)
        result = mine2_retrieve(graph, "s1 links o1", BenchParams(), embedder)
        assert len(result.triples) == 8
        assert all(t.hop == 0 for t in result.triples)

    def test_question_equal_to_rendering_ranks_first(self, embedder):
        graph = self.provenance_graph(triple_count=8)
        result = mine2_retrieve(graph, "s3 links o3", BenchParams(), embedder)
        assert result.triples[0].spo == ("s3", "links", "o3")

    def test_missing_provenance_is_configuration_error(self, embedder):
        graph = build_graph([Triple("a", "p", "b")])
        with pytest.raises(ConfigurationError):
            mine2_retrieve(graph, "q", BenchParams(), embedder)

    def test_star_graph_expansion_stays_within_two_hops(self, embedder):
        triples = [Triple("hub", "links", f"spoke{i}", "c0") for i in range(12)]
        triples += [
            Triple("spoke0", "feeds", "tail", "c1"),
            Triple("tail", "feeds", "beyond", "c1"),
            Triple("beyond", "feeds", "faraway", "c1"),
        ]
        graph = build_graph(
            triples, chunk_table={"c0": "hub text", "c1": "tail text"}
        )
        result = mine2_retrieve(graph, "hub links spoke0", BenchParams(), embedder)
        top = result.triples[:10]
        expansion = result.triples[10:]
        assert all(t.hop == 0 for t in top)
        assert 1 <= len(result.triples) <= 20
        assert all(t.hop <= 2 for t in expansion)
        hops = [t.hop for t in expansion]
        assert hops == sorted(hops)

    def test_chunk_texts_attached_and_deduplicated(self, embedder):
        graph = self.provenance_graph(triple_count=6)
        result = mine2_retrieve(graph, "s0 links o0", BenchParams(), embedder)
        assert sorted(result.chunk_texts) == ["chunk text 0", "chunk text 1",
                                              "chunk text 2"]
        assert len(result.chunk_texts) == len(set(result.chunk_texts))

    @pytest.mark.parametrize("seed", range(15))
    def test_matches_oracle_on_random_provenance_graphs(self, seed, embedder):
        rng = random.Random(seed + 1000)
        graph = random_graph(rng, max_nodes=25, provenance=True)
        question = " ".join(rng.choices(WORDS, k=4))
        params = BenchParams()
        result = mine2_retrieve(graph, question, params, embedder)
        top_expected, expansion_expected = mine2_oracle(graph, question, params, embedder)
        got = [t.spo for t in result.triples]
        assert got[: len(top_expected)] == top_expected
        assert got[len(top_expected):] == expansion_expected

    def test_at_most_twenty_triples(self, embedder):
        rng = random.Random(4)
        graph = random_graph(rng, max_nodes=40, provenance=True)
        result = mine2_retrieve(graph, "ant bee", BenchParams(), embedder)
        assert len(result.triples) <= 20

    def test_twenty_triple_block_renders_in_documented_order(self, embedder):
        # The answer prompt receives one "s p o" line per retrieved triple, in
        # retrieval order: the fused top-10 first, then the hop expansion.
        rng = random.Random(12)
        graph = random_graph(rng, max_nodes=30, provenance=True)
        result = mine2_retrieve(graph, "ant bee cat", BenchParams(), embedder)
        expected = "\n".join(" ".join(t.spo) for t in result.triples)
        assert result.triples_text() == expected
        assert len(result.triples_text().splitlines()) == len(result.triples)


class TestMine2Eval:
    def graph_with_answer(self):
        triples = [
            Triple("paris", "capital of", "france", "c0"),
            Triple("rome", "capital of", "italy", "c0"),
        ]
        return build_graph(
            triples, chunk_table={"c0": "Paris is the capital of France."}
        )

    def test_containment_pipeline_scores_100(self, gateway, embedder):
        report = mine2_eval(
            self.graph_with_answer(),
            [QAPair("what is the capital of france?", "paris")],
            BenchParams(), gateway, embedder,
        )
        assert report.accuracy == 100.0

    def test_empty_question_list_is_error(self, gateway, embedder):
        with pytest.raises(ValidationError):
            mine2_eval(self.graph_with_answer(), [], BenchParams(), gateway, embedder)

    def test_three_of_four_yes_is_75(self, gateway, embedder):
        pairs = [
            QAPair("q1", "paris"),
            QAPair("q2", "france"),
            QAPair("q3", "rome"),
            QAPair("q4", "atlantis"),  # absent from every triple and chunk
        ]
        report = mine2_eval(
            self.graph_with_answer(), pairs, BenchParams(), gateway, embedder
        )
        assert report.accuracy == 75.0
