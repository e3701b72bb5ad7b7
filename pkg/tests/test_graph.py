"""Graph construction rules, hand-enumerated counts, and invariants."""

import numpy as np
import pytest

from mlkg.corpus import CorpusError
from mlkg.graph import (
    EdgeKind,
    Level,
    NodeRef,
    build_graph,
    dump_graph,
    graph_stats,
    load_graph,
    neighbors,
)
from mlkg.synthetic import random_bundle

from conftest import bridge_bundle, make_bundle, path_bundle, self_loop_bundle, single_triple_bundle


class TestHandCounts:
    """Edge sets enumerated by hand for small corpora; the expected values
    below were written down from the construction rules before running
    the builder."""

    def test_one_triple_two_chunks(self):
        g = build_graph(single_triple_bundle())
        assert g.entity_table == ("alpha", "beta")
        assert g.n_chunks == 2 and g.n_documents == 1
        assert g.edges[EdgeKind.OO].pairs == ((0, 1),)
        assert g.edges[EdgeKind.OO].attributes == ("feeds",)
        assert g.edges[EdgeKind.CC].pairs == ((0, 1),)
        assert g.edges[EdgeKind.OC].pairs == ((0, 0), (1, 0))
        assert g.edges[EdgeKind.OD].pairs == ((0, 0), (1, 0))
        assert g.edges[EdgeKind.CD].pairs == ((0, 0), (1, 0))
        assert g.report.triples_total == 1
        assert g.report.self_loop_triples_skipped == 0

    def test_duplicate_triple_in_two_chunks(self):
        bundle = make_bundle(
            [
                (
                    "d1",
                    "T",
                    "x y",
                    [
                        ("c1", "x", [("a", "r", "b")]),
                        ("c2", "y", [("a", "r", "b")]),
                    ],
                )
            ]
        )
        g = build_graph(bundle)
        # One deduplicated entity pair, but containment from both chunks.
        assert g.edges[EdgeKind.OO].pairs == ((0, 1),)
        assert g.edges[EdgeKind.OC].pairs == ((0, 0), (0, 1), (1, 0), (1, 1))
        assert g.edges[EdgeKind.OD].pairs == ((0, 0), (1, 0))
        assert g.report.triples_total == 2
        assert len(g.triples) == 2

    def test_reversed_pair_keeps_first_predicate(self):
        bundle = make_bundle(
            [
                (
                    "d1",
                    "T",
                    "x",
                    [("c1", "x", [("a", "first", "b"), ("b", "second", "a")])],
                )
            ]
        )
        g = build_graph(bundle)
        assert g.edges[EdgeKind.OO].pairs == ((0, 1),)
        assert g.edges[EdgeKind.OO].attributes == ("first",)

    def test_self_loop_skips_oo_but_keeps_entity(self):
        g = build_graph(self_loop_bundle())
        assert g.entity_table == ("gamma",)
        assert g.edges[EdgeKind.OO].pairs == ()
        assert g.edges[EdgeKind.OC].pairs == ((0, 0),)
        assert g.edges[EdgeKind.OD].pairs == ((0, 0),)
        assert g.report.self_loop_triples_skipped == 1

    def test_entity_indices_follow_first_appearance(self):
        bundle = make_bundle(
            [
                (
                    "d1",
                    "T",
                    "x",
                    [("c1", "x", [("b", "r", "c"), ("a", "r", "b")])],
                )
            ]
        )
        g = build_graph(bundle)
        assert g.entity_table == ("b", "c", "a")

    def test_surface_forms_merge_after_normalization(self):
        bundle = make_bundle(
            [
                (
                    "d1",
                    "T",
                    "x",
                    [("c1", "x", [("  Big  Cat ", "r", "dog"), ("big cat", "w", "fish")])],
                )
            ]
        )
        g = build_graph(bundle)
        assert g.entity_table == ("big cat", "dog", "fish")

    def test_chunk_sequence_edges_follow_positions(self):
        bundle = make_bundle(
            [
                (
                    "d1",
                    "T",
                    "x",
                    [("c1", "a", []), ("c2", "b", []), ("c3", "c", [])],
                ),
                ("d2", "T", "y", [("c4", "d", [])]),
            ]
        )
        g = build_graph(bundle)
        assert g.edges[EdgeKind.CC].pairs == ((0, 1), (1, 2))
        assert g.edges[EdgeKind.CD].pairs == ((0, 0), (1, 0), (2, 0), (3, 1))

    def test_invalid_bundle_rejected(self):
        bundle = make_bundle([("d1", "T", "", [("c1", "a", [])])])
        with pytest.raises(CorpusError, match="empty text"):
            build_graph(bundle)


class TestNeighbors:
    def test_oo_neighbors_ascending(self):
        g = build_graph(bridge_bundle(p=3, q=2))
        hub = g.entity_table.index("hub")
        got = neighbors(g, NodeRef(Level.ENTITY, hub), EdgeKind.OO)
        indices = [ref.index for ref in got]
        assert indices == sorted(indices)
        assert len(got) == 5  # three sources plus two destinations

    def test_wrong_level_gives_empty(self):
        g = build_graph(single_triple_bundle())
        assert neighbors(g, NodeRef(Level.DOCUMENT, 0), EdgeKind.OO) == []

    def test_cross_level_neighbors(self):
        g = build_graph(single_triple_bundle())
        docs = neighbors(g, NodeRef(Level.ENTITY, 0), EdgeKind.OD)
        assert docs == [NodeRef(Level.DOCUMENT, 0)]
        ents = neighbors(g, NodeRef(Level.DOCUMENT, 0), EdgeKind.OD)
        assert [e.index for e in ents] == [0, 1]

    def test_out_of_range_raises(self):
        g = build_graph(single_triple_bundle())
        with pytest.raises(IndexError):
            neighbors(g, NodeRef(Level.ENTITY, 99), EdgeKind.OO)


class TestStatsAndSerialization:
    def test_stats_match_edge_sets(self):
        g = build_graph(path_bundle())
        stats = graph_stats(g)
        assert (stats.entities, stats.chunks, stats.documents) == (5, 4, 4)
        assert stats.oo == len(g.edges[EdgeKind.OO].pairs) == 4
        assert stats.cc == 0
        assert stats.cd == 4

    def test_dump_load_round_trip(self, tmp_path):
        g = build_graph(random_bundle(np.random.default_rng(7)))
        path = tmp_path / "graph.jsonl"
        dump_graph(g, path)
        again = load_graph(path)
        assert again.entity_table == g.entity_table
        assert again.doc_ids == g.doc_ids
        assert again.chunk_ids == g.chunk_ids
        for kind in EdgeKind:
            assert again.edges[kind].pairs == g.edges[kind].pairs
            assert again.edges[kind].attributes == g.edges[kind].attributes
        assert [t for t in again.triples] == [t for t in g.triples]
        assert graph_stats(again) == graph_stats(g)

    def test_dump_load_is_byte_stable(self, tmp_path):
        g = build_graph(random_bundle(np.random.default_rng(8)))
        first = tmp_path / "a.jsonl"
        second = tmp_path / "b.jsonl"
        dump_graph(g, first)
        dump_graph(load_graph(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_load_rejects_tampered_file(self, tmp_path):
        g = build_graph(single_triple_bundle())
        path = tmp_path / "graph.jsonl"
        dump_graph(g, path)
        lines = path.read_text().splitlines()
        lines[0] = lines[0].replace("mlkg-graph", "other-format")
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError):
            load_graph(bad)

    def test_load_rejects_out_of_range_edge(self, tmp_path):
        g = build_graph(single_triple_bundle())
        path = tmp_path / "graph.jsonl"
        dump_graph(g, path)
        text = path.read_text().replace('"edge": "oo", "a": 0, "b": 1', '"edge": "oo", "a": 0, "b": 9')
        bad = tmp_path / "bad.jsonl"
        bad.write_text(text)
        with pytest.raises(ValueError):
            load_graph(bad)


def check_invariants(bundle, g):
    """Structural invariants every built graph must satisfy."""
    ne, nc, nd = g.n_entities, g.n_chunks, g.n_documents

    for kind, (left_level, right_level) in {
        EdgeKind.OO: (Level.ENTITY, Level.ENTITY),
        EdgeKind.OC: (Level.ENTITY, Level.CHUNK),
        EdgeKind.OD: (Level.ENTITY, Level.DOCUMENT),
        EdgeKind.CC: (Level.CHUNK, Level.CHUNK),
        EdgeKind.CD: (Level.CHUNK, Level.DOCUMENT),
    }.items():
        counts = {Level.ENTITY: ne, Level.CHUNK: nc, Level.DOCUMENT: nd}
        pairs = g.edges[kind].pairs
        assert len(set(pairs)) == len(pairs), f"duplicate {kind} pairs"
        for a, b in pairs:
            assert 0 <= a < counts[left_level]
            assert 0 <= b < counts[right_level]

    # No entity self pairs in the OO set.
    assert all(a != b for a, b in g.edges[EdgeKind.OO].pairs)
    # Unordered dedup: both orientations never appear.
    oo = set(g.edges[EdgeKind.OO].pairs)
    assert all((b, a) not in oo for a, b in oo)

    # Chunk sequence edges form exactly the path of adjacent positions.
    by_doc = {}
    for c in range(nc):
        by_doc.setdefault(g.chunk_docs[c], []).append(c)
    expected_cc = set()
    for doc, members in by_doc.items():
        ordered = sorted(members, key=lambda c: g.chunk_positions[c])
        expected_cc.update(
            (min(a, b), max(a, b)) for a, b in zip(ordered, ordered[1:])
        )
    got_cc = {(min(a, b), max(a, b)) for a, b in g.edges[EdgeKind.CC].pairs}
    assert got_cc == expected_cc

    # Every chunk links to exactly its own document.
    assert sorted(g.edges[EdgeKind.CD].pairs) == [
        (c, g.chunk_docs[c]) for c in range(nc)
    ]

    # Entity-in-chunk implies entity-in-document.
    od = set(g.edges[EdgeKind.OD].pairs)
    for e, c in g.edges[EdgeKind.OC].pairs:
        assert (e, g.chunk_docs[c]) in od

    # Every document-level containment is witnessed by some chunk.
    oc_docs = {(e, g.chunk_docs[c]) for e, c in g.edges[EdgeKind.OC].pairs}
    assert od == oc_docs

    # Triple accounting.
    assert g.report.triples_total == len(bundle.triples)
    assert len(g.triples) == len(bundle.triples)
    assert g.report.self_loop_triples_skipped == sum(
        1
        for t in bundle.triples
        if " ".join(t.subject.split()).lower() == " ".join(t.object.split()).lower()
    )


class TestInvariantsProperty:
    def test_fifty_random_bundles(self):
        for trial in range(50):
            bundle = random_bundle(np.random.default_rng(5000 + trial))
            g = build_graph(bundle)
            check_invariants(bundle, g)
