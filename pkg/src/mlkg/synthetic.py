"""Generated corpora: random bundles for property tests and two fixed
benchmark corpora (an overfit toy corpus and a distractor corpus that
separates query-conditioned attention from the static ablation)."""

from __future__ import annotations

import numpy as np

from .corpus import ChunkRecord, CorpusBundle, DocumentRecord, TripleRecord

_PREDICATES = ("feeds", "powers", "links to", "orbits", "follows")

_FILLER = "shared background notes repeat common context across the archive collection"


def random_token(rng: np.random.Generator, length: int = 5) -> str:
    return "".join(chr(ord("a") + int(c)) for c in rng.integers(0, 26, size=length))


def random_bundle(
    rng: np.random.Generator,
    n_docs: int | None = None,
    max_chunks: int = 3,
    max_triples_per_chunk: int = 2,
) -> CorpusBundle:
    """A valid random corpus exercising edge cases: single-chunk docs,
    docs without triples, repeated triples, and self-loop triples."""
    if n_docs is None:
        n_docs = int(rng.integers(1, 7))
    entity_pool = [random_token(rng) for _ in range(max(3, 2 * n_docs))]
    documents: list[DocumentRecord] = []
    chunks: list[ChunkRecord] = []
    triples: list[TripleRecord] = []
    for d in range(n_docs):
        doc_id = f"d{d:03d}"
        n_chunks = int(rng.integers(1, max_chunks + 1))
        chunk_texts = []
        for position in range(n_chunks):
            chunk_id = f"{doc_id}-c{position}"
            sentences = []
            for _ in range(int(rng.integers(0, max_triples_per_chunk + 1))):
                subject = entity_pool[int(rng.integers(len(entity_pool)))]
                predicate = _PREDICATES[int(rng.integers(len(_PREDICATES)))]
                if rng.random() < 0.1:
                    obj = subject  # self-loop triple, skipped by the builder
                else:
                    obj = entity_pool[int(rng.integers(len(entity_pool)))]
                triples.append(TripleRecord(subject, predicate, obj, chunk_id, doc_id))
                sentences.append(f"{subject} {predicate} {obj}.")
                if rng.random() < 0.15:
                    # occasional duplicate occurrence within the chunk
                    triples.append(TripleRecord(subject, predicate, obj, chunk_id, doc_id))
            sentences.append(f"note {random_token(rng)}.")
            text = " ".join(sentences)
            chunks.append(ChunkRecord(chunk_id, doc_id, position, text))
            chunk_texts.append(text)
        documents.append(DocumentRecord(doc_id, f"title {doc_id}", " ".join(chunk_texts)))
    return CorpusBundle(tuple(documents), tuple(chunks), tuple(triples))


def _doc(doc_id: str, title: str, chunk_texts: list[str]) -> tuple[DocumentRecord, list[ChunkRecord]]:
    doc = DocumentRecord(doc_id, title, " ".join(chunk_texts))
    chunk_records = [
        ChunkRecord(f"{doc_id}-c{i}", doc_id, i, text) for i, text in enumerate(chunk_texts)
    ]
    return doc, chunk_records


def overfit_bundle() -> CorpusBundle:
    """Twelve documents in six cross-document chain pairs with disjoint
    vocabularies (only each pair's bridge entity is shared)."""
    # Distinct wordy tokens per pair; no token reuse across pairs.
    names = [
        ("quartz", "marble", "basalt"),
        ("falcon", "osprey", "condor"),
        ("violet", "indigo", "crimson"),
        ("walnut", "almond", "pecan"),
        ("fjord", "lagoon", "estuary"),
        ("comet", "nebula", "quasar"),
    ]
    verbs = [
        ("grinds", "polishes"),
        ("chases", "lifts"),
        ("tints", "shades"),
        ("cracks", "roasts"),
        ("carves", "floods"),
        ("trails", "burns"),
    ]
    documents: list[DocumentRecord] = []
    chunks: list[ChunkRecord] = []
    triples: list[TripleRecord] = []
    for i, ((head, mid, tail), (v1, v2)) in enumerate(zip(names, verbs)):
        a_id, b_id = f"a{i}", f"b{i}"
        doc, chunk_records = _doc(a_id, f"{head} chronicle", [f"{head} {v1} {mid}."])
        documents.append(doc)
        chunks.extend(chunk_records)
        triples.append(TripleRecord(head, v1, mid, f"{a_id}-c0", a_id))
        doc, chunk_records = _doc(b_id, f"{mid} register", [f"{mid} {v2} {tail}."])
        documents.append(doc)
        chunks.extend(chunk_records)
        triples.append(TripleRecord(mid, v2, tail, f"{b_id}-c0", b_id))
    return CorpusBundle(tuple(documents), tuple(chunks), tuple(triples))


def advantage_bundle(n_pairs: int = 15, distractors_per_pair: int = 2) -> CorpusBundle:
    """Chain pairs plus lexical distractors sharing each bridge token.

    Every document carries the same filler chunk, so static (query
    independent) attention mixes identical filler into every document
    representation, while distractor texts mention the bridge entity
    without any triple linking them into the entity graph.
    """
    rng = np.random.default_rng(20240817)
    tokens = set()
    while len(tokens) < 4 * n_pairs:
        tokens.add(random_token(rng, 6))
    pool = sorted(tokens)
    documents: list[DocumentRecord] = []
    chunks: list[ChunkRecord] = []
    triples: list[TripleRecord] = []
    for i in range(n_pairs):
        head, mid, tail, junk = pool[4 * i : 4 * i + 4]
        a_id, b_id = f"a{i:02d}", f"b{i:02d}"
        doc, chunk_records = _doc(a_id, f"record {a_id}", [_FILLER + ".", f"{head} feeds {mid}."])
        documents.append(doc)
        chunks.extend(chunk_records)
        triples.append(TripleRecord(head, "feeds", mid, f"{a_id}-c1", a_id))
        doc, chunk_records = _doc(b_id, f"record {b_id}", [_FILLER + ".", f"{mid} powers {tail}."])
        documents.append(doc)
        chunks.extend(chunk_records)
        triples.append(TripleRecord(mid, "powers", tail, f"{b_id}-c1", b_id))
        for j in range(distractors_per_pair):
            x_id = f"x{i:02d}{j}"
            text = f"{mid} feeds {junk}." if j % 2 == 0 else f"{junk} powers {mid}."
            doc, chunk_records = _doc(x_id, f"record {x_id}", [_FILLER + ".", text])
            documents.append(doc)
            chunks.extend(chunk_records)
    return CorpusBundle(tuple(documents), tuple(chunks), tuple(triples))
