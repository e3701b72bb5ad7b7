"""Shared corpus-building helpers for the test suite."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mlkg.corpus import ChunkRecord, CorpusBundle, DocumentRecord, TripleRecord


def make_bundle(docs):
    """Build a CorpusBundle from nested literals.

    `docs` is a list of (doc_id, title, text, chunks) where chunks is a
    list of (chunk_id, text, triples) in position order and each triple
    is (subject, predicate, object).
    """
    documents, chunks, triples = [], [], []
    for doc_id, title, text, chunk_specs in docs:
        documents.append(DocumentRecord(doc_id, title, text))
        for position, (chunk_id, chunk_text, triple_specs) in enumerate(chunk_specs):
            chunks.append(ChunkRecord(chunk_id, doc_id, position, chunk_text))
            for s, p, o in triple_specs:
                triples.append(TripleRecord(s, p, o, chunk_id, doc_id))
    return CorpusBundle(tuple(documents), tuple(chunks), tuple(triples))


def single_triple_bundle():
    """One document, two chunks, one triple — the smallest two-entity graph."""
    return make_bundle(
        [
            (
                "d1",
                "Alpha",
                "alpha feeds beta. filler.",
                [
                    ("c1", "alpha feeds beta.", [("alpha", "feeds", "beta")]),
                    ("c2", "filler.", []),
                ],
            )
        ]
    )


def self_loop_bundle():
    """One document whose only triple has subject == object."""
    return make_bundle(
        [
            (
                "d1",
                "Loop",
                "gamma contains gamma.",
                [("c1", "gamma contains gamma.", [("gamma", "contains", "Gamma")])],
            )
        ]
    )


def path_bundle():
    """Four documents chained through shared entities e1-e2-e3-e4-e5."""
    docs = []
    entities = ["e1", "e2", "e3", "e4", "e5"]
    for i, doc in enumerate(["A", "B", "C", "D"]):
        s, o = entities[i], entities[i + 1]
        docs.append(
            (
                f"doc-{doc}",
                f"Doc {doc}",
                f"{s} links {o}.",
                [(f"chunk-{doc}", f"{s} links {o}.", [(s, "links", o)])],
            )
        )
    return make_bundle(docs)


def bridge_bundle(p=3, q=2):
    """p triples into one bridge entity and q out of it, all in distinct
    documents; yields exactly p*q cross-document chains."""
    docs = []
    for i in range(p):
        docs.append(
            (
                f"in-{i}",
                f"In {i}",
                f"src{i} sends hub.",
                [(f"cin-{i}", f"src{i} sends hub.", [(f"src{i}", "sends", "hub")])],
            )
        )
    for j in range(q):
        docs.append(
            (
                f"out-{j}",
                f"Out {j}",
                f"hub serves dst{j}.",
                [(f"cout-{j}", f"hub serves dst{j}.", [("hub", "serves", f"dst{j}")])],
            )
        )
    return make_bundle(docs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240815)
