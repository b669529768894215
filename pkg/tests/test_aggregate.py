"""Aggregation: normalization, union semantics, and the algebraic laws."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textkg.aggregate import aggregate, graph_to_chunk_graphs, normalize_surface
from textkg.errors import ValidationError
from textkg.extract import ChunkGraph
from textkg.graph import Triple, serialize


def make_chunk_graph(chunk_id: str, triples: list[tuple[str, str, str]],
                     entities: list[str] | None = None, text: str = "") -> ChunkGraph:
    triple_objs = tuple(Triple(s, p, o, chunk_id) for s, p, o in triples)
    if entities is None:
        entities = [x for t in triple_objs for x in (t.subject, t.object)]
    return ChunkGraph(
        chunk_id=chunk_id,
        entities=tuple(dict.fromkeys(entities)),
        triples=triple_objs,
        text=text,
    )


# Strategy for random chunk-graph sets built from a small label pool so that
# cross-chunk collisions (the interesting case) actually happen.
label_pool = st.sampled_from(
    ["NYC", "nyc", "New York", "usa", "USA", "bees", "Bees ", "honey", "is in",
     "Is In", "makes", "MAKES", "lives  in"]
)
triple_tuples = st.tuples(label_pool, label_pool, label_pool)


@st.composite
def chunk_graph_sets(draw):
    count = draw(st.integers(min_value=0, max_value=5))
    graphs = []
    for i in range(count):
        triples = draw(st.lists(triple_tuples, max_size=5))
        graphs.append(make_chunk_graph(f"chunk{i}", triples, text=f"text {i}"))
    return graphs


class TestAggregate:
    def test_case_variants_collapse_to_one_assertion(self):
        graphs = [
            make_chunk_graph("c1", [("NYC", "Is In", "USA")], text="first"),
            make_chunk_graph("c2", [("nyc", "is in", "usa")], text="second"),
        ]
        merged = aggregate(graphs)
        assert merged.entities == {"nyc", "usa"}
        assert merged.relations == {"is in"}
        assert len(merged.distinct_assertions()) == 1
        assert len(merged.triples) == 2  # two provenance records retained
        assert merged.chunk_table == {"c1": "first", "c2": "second"}

    def test_zero_inputs_give_empty_graph(self):
        merged = aggregate([])
        assert not merged.entities and not merged.relations and not merged.triples

    def test_already_lowercase_graph_is_unchanged(self):
        graphs = [make_chunk_graph("c1", [("bees", "make", "honey")], text="t")]
        merged = aggregate(graphs)
        assert merged.entities == {"bees", "honey"}
        assert merged.relations == {"make"}
        assert {t.spo() for t in merged.triples} == {("bees", "make", "honey")}

    def test_internal_whitespace_collapsed(self):
        assert normalize_surface("  New \t York\n City ") == "new york city"
        merged = aggregate([make_chunk_graph("c1", [("New  York", "is  in", "usa")])])
        assert merged.entities == {"new york", "usa"}

    def test_isolated_entities_survive(self):
        graphs = [make_chunk_graph("c1", [], entities=["Lonely", "bees"])]
        merged = aggregate(graphs)
        assert merged.entities == {"lonely", "bees"}

    def test_duplicate_chunk_ids_rejected(self):
        graphs = [
            make_chunk_graph("c1", [("a", "b", "c")]),
            make_chunk_graph("c1", [("d", "e", "f")]),
        ]
        with pytest.raises(ValidationError):
            aggregate(graphs)

    def test_graph_invariants_hold_after_aggregation(self):
        merged = aggregate(
            [make_chunk_graph("c1", [("A", "B", "C")], entities=["A", "C", "extra"])]
        )
        merged.validate()


class TestAggregationLaws:
    @settings(max_examples=100)
    @given(graphs=chunk_graph_sets())
    def test_idempotence(self, graphs):
        once = aggregate(graphs)
        again = aggregate(graph_to_chunk_graphs(once))
        assert again == once

    @settings(max_examples=100)
    @given(graphs=chunk_graph_sets(), seed=st.integers(0, 2**16))
    def test_input_permutation_invariance(self, graphs, seed):
        shuffled = graphs[:]
        random.Random(seed).shuffle(shuffled)
        assert serialize(aggregate(shuffled)) == serialize(aggregate(graphs))

    @settings(max_examples=100)
    @given(graphs=chunk_graph_sets())
    def test_distinct_count_monotonicity(self, graphs):
        merged = aggregate(graphs)
        total_inputs = sum(len(g.triples) for g in graphs)
        assert len(merged.distinct_assertions()) <= total_inputs
        assert len(merged.triples) <= total_inputs
