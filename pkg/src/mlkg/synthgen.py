"""Synthetic one-hop and two-hop questions from the graph's triples.

Fixed English templates stand in for generated phrasing; the training
signal only needs the lexical overlap between questions and their
support documents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import substream
from .embeddings import EmbeddingSource, embed_graph, embed_text
from .graph import Level, MultiLKG, TripleOcc
from .training import TrainingExample, sample_hard_negatives


@dataclass(frozen=True)
class SyntheticQuestion:
    hop: int
    question_text: str
    answer: str
    support_doc_ids: tuple[str, ...]
    provenance: tuple[TripleOcc, ...]


def doc_level_triples(g: MultiLKG) -> list[TripleOcc]:
    """First occurrence of each distinct (subject, predicate, object,
    doc), in scan order; extra chunk occurrences collapse."""
    seen: set[tuple[int, str, int, int]] = set()
    out: list[TripleOcc] = []
    for t in g.triples:
        key = (t.subject, t.predicate, t.object, t.doc)
        if key not in seen:
            seen.add(key)
            out.append(t)
    return out


def gen_one_hop(g: MultiLKG) -> list[SyntheticQuestion]:
    """Two questions per triple (masked subject, masked object),
    deduplicated on (question text, answer, document)."""
    questions: list[SyntheticQuestion] = []
    seen: set[tuple[str, str, str]] = set()
    for occ in g.triples:
        subject = g.entity_table[occ.subject]
        obj = g.entity_table[occ.object]
        doc_id = g.doc_ids[occ.doc]
        for text, answer in (
            (f"which entity {occ.predicate} {obj}?", subject),
            (f"{subject} {occ.predicate} which entity?", obj),
        ):
            key = (text, answer, doc_id)
            if key in seen:
                continue
            seen.add(key)
            questions.append(SyntheticQuestion(1, text, answer, (doc_id,), (occ,)))
    return questions


def enumerate_chains(g: MultiLKG) -> list[tuple[TripleOcc, TripleOcc]]:
    """All ordered chains: doc-level triples (s, v, e) and (e, w, o) in
    distinct documents, joined on object-of-first = subject-of-second."""
    triples = doc_level_triples(g)
    by_subject: dict[int, list[TripleOcc]] = {}
    for t in triples:
        by_subject.setdefault(t.subject, []).append(t)
    chains: list[tuple[TripleOcc, TripleOcc]] = []
    for first in triples:
        for second in by_subject.get(first.object, ()):
            if second.doc != first.doc:
                chains.append((first, second))
    return chains


def gen_two_hop(
    g: MultiLKG, cap: int | None = 10, rng: np.random.Generator | None = None
) -> list[SyntheticQuestion]:
    """Two questions per cross-document chain. When a bridge entity
    participates in more than `cap` chains, that bridge's chains are
    subsampled with `rng` (chain order preserved)."""
    chains = enumerate_chains(g)
    if cap is not None:
        by_bridge: dict[int, list[int]] = {}
        for idx, (first, _) in enumerate(chains):
            by_bridge.setdefault(first.object, []).append(idx)
        keep: set[int] = set()
        for bridge in sorted(by_bridge):
            indices = by_bridge[bridge]
            if len(indices) <= cap:
                keep.update(indices)
            else:
                if rng is None:
                    rng = substream(0, "synth-cap")
                picked = rng.choice(len(indices), size=cap, replace=False)
                keep.update(indices[i] for i in sorted(picked))
        chains = [chain for idx, chain in enumerate(chains) if idx in keep]

    questions: list[SyntheticQuestion] = []
    seen: set[tuple[str, str, tuple[str, ...]]] = set()
    for first, second in chains:
        head = g.entity_table[first.subject]
        mid = g.entity_table[first.object]
        tail = g.entity_table[second.object]
        support = (g.doc_ids[first.doc], g.doc_ids[second.doc])
        for text, answer in (
            (f"which entity {first.predicate} {mid}, where {mid} {second.predicate} {tail}?", head),
            (f"{head} {first.predicate} {mid}, and {mid} {second.predicate} which entity?", tail),
        ):
            key = (text, answer, support)
            if key in seen:
                continue
            seen.add(key)
            questions.append(SyntheticQuestion(2, text, answer, support, (first, second)))
    return questions


def emit_examples(
    questions: list[SyntheticQuestion],
    g: MultiLKG,
    source: EmbeddingSource | None,
    negatives_k: int,
    seed: int,
) -> list[TrainingExample]:
    """Turn questions into training examples, attach hard negatives when
    an embedding source is given, and shuffle with the seed."""
    if source is not None:
        raw_docs = embed_graph(source, g)[Level.DOCUMENT]
        rng_neg = substream(seed, "negatives")
        examples = [
            TrainingExample(
                q.question_text,
                q.support_doc_ids,
                sample_hard_negatives(
                    g,
                    raw_docs,
                    embed_text(source, q.question_text),
                    q.support_doc_ids,
                    negatives_k,
                    rng_neg,
                ),
            )
            for q in questions
        ]
    else:
        examples = [
            TrainingExample(q.question_text, q.support_doc_ids) for q in questions
        ]
    order = substream(seed, "shuffle-examples").permutation(len(examples))
    return [examples[i] for i in order]
