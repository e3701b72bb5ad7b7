"""Three-level knowledge graph: entities, chunks, documents.

Five undirected edge sets connect the levels: entity-entity (from
triples, predicate kept as an attribute), chunk-chunk (adjacent
positions within a document), entity-chunk and entity-document
(containment), and chunk-document (containment).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .corpus import CorpusBundle, CorpusError, normalize_entity, validate_bundle
from .corpus import _normalize_or_empty


class Level(Enum):
    ENTITY = "entity"
    CHUNK = "chunk"
    DOCUMENT = "document"


class EdgeKind(Enum):
    OO = "oo"
    OC = "oc"
    OD = "od"
    CC = "cc"
    CD = "cd"


# Endpoint levels implied by edge kind, in stored pair order.
KIND_LEVELS: dict[EdgeKind, tuple[Level, Level]] = {
    EdgeKind.OO: (Level.ENTITY, Level.ENTITY),
    EdgeKind.OC: (Level.ENTITY, Level.CHUNK),
    EdgeKind.OD: (Level.ENTITY, Level.DOCUMENT),
    EdgeKind.CC: (Level.CHUNK, Level.CHUNK),
    EdgeKind.CD: (Level.CHUNK, Level.DOCUMENT),
}


@dataclass(frozen=True)
class NodeRef:
    level: Level
    index: int


@dataclass(frozen=True)
class EdgeSet:
    """Undirected edges as index pairs; endpoint levels follow from kind."""

    kind: EdgeKind
    pairs: tuple[tuple[int, int], ...]
    attributes: tuple[str, ...] | None = None


@dataclass(frozen=True)
class TripleOcc:
    """One normalized triple occurrence, kept for question synthesis."""

    subject: int
    predicate: str
    object: int
    chunk: int
    doc: int


@dataclass(frozen=True)
class BuildReport:
    triples_total: int
    self_loop_triples_skipped: int


@dataclass(frozen=True, eq=False)
class MultiLKG:
    entity_table: tuple[str, ...]
    chunk_ids: tuple[str, ...]
    chunk_docs: tuple[int, ...]
    chunk_positions: tuple[int, ...]
    chunk_texts: tuple[str, ...]
    doc_ids: tuple[str, ...]
    doc_titles: tuple[str, ...]
    doc_texts: tuple[str, ...]
    edges: dict[EdgeKind, EdgeSet]
    triples: tuple[TripleOcc, ...]
    report: BuildReport
    _adjacency: dict = field(repr=False)
    _doc_lookup: dict[str, int] = field(repr=False)

    @property
    def n_entities(self) -> int:
        return len(self.entity_table)

    @property
    def n_chunks(self) -> int:
        return len(self.chunk_ids)

    @property
    def n_documents(self) -> int:
        return len(self.doc_ids)

    def level_count(self, level: Level) -> int:
        if level is Level.ENTITY:
            return self.n_entities
        if level is Level.CHUNK:
            return self.n_chunks
        return self.n_documents

    def doc_index(self, doc_id: str) -> int:
        try:
            return self._doc_lookup[doc_id]
        except KeyError:
            raise KeyError(f"unknown doc_id {doc_id!r}") from None


@dataclass(frozen=True)
class GraphStats:
    entities: int
    chunks: int
    documents: int
    oo: int
    oc: int
    od: int
    cc: int
    cd: int


def _build_adjacency(
    edges: dict[EdgeKind, EdgeSet], counts: dict[Level, int]
) -> dict[EdgeKind, dict[Level, tuple[tuple[int, ...], ...]]]:
    adjacency: dict[EdgeKind, dict[Level, tuple[tuple[int, ...], ...]]] = {}
    for kind, edge_set in edges.items():
        level_a, level_b = KIND_LEVELS[kind]
        lists_a: list[list[int]] = [[] for _ in range(counts[level_a])]
        lists_b = lists_a if level_a is level_b else [[] for _ in range(counts[level_b])]
        for a, b in edge_set.pairs:
            lists_a[a].append(b)
            lists_b[b].append(a)
        per_level = {level_a: tuple(tuple(sorted(lst)) for lst in lists_a)}
        if level_a is not level_b:
            per_level[level_b] = tuple(tuple(sorted(lst)) for lst in lists_b)
        adjacency[kind] = per_level
    return adjacency


def build_graph(bundle: CorpusBundle) -> MultiLKG:
    """Construct the three-level graph from a validated bundle.

    Node indices follow first-appearance order (documents and chunks by
    record order, entities by triple scan order, subject before object).
    Triples whose subject equals object after normalization contribute
    no entity-entity edge; they are counted in the build report.
    """
    violations = validate_bundle(bundle)
    if violations:
        raise CorpusError("build_graph requires a valid bundle:\n  " + "\n  ".join(violations))

    doc_lookup = {doc.doc_id: i for i, doc in enumerate(bundle.documents)}
    chunk_lookup = {chunk.chunk_id: i for i, chunk in enumerate(bundle.chunks)}

    entity_lookup: dict[str, int] = {}
    entity_table: list[str] = []

    def intern(surface: str) -> int:
        normalized = normalize_entity(surface)
        if normalized not in entity_lookup:
            entity_lookup[normalized] = len(entity_table)
            entity_table.append(normalized)
        return entity_lookup[normalized]

    oo_pred: dict[tuple[int, int], str] = {}
    oc_pairs: set[tuple[int, int]] = set()
    od_pairs: set[tuple[int, int]] = set()
    occurrences: list[TripleOcc] = []
    self_loops = 0

    for triple in bundle.triples:
        s = intern(triple.subject)
        o = intern(triple.object)
        c = chunk_lookup[triple.chunk_id]
        d = doc_lookup[triple.doc_id]
        predicate = _normalize_or_empty(triple.predicate)
        occurrences.append(TripleOcc(s, predicate, o, c, d))
        if s == o:
            self_loops += 1
        else:
            oo_pred.setdefault((min(s, o), max(s, o)), predicate)
        for e in (s, o):
            oc_pairs.add((e, c))
            od_pairs.add((e, d))

    by_doc: dict[int, list[tuple[int, int]]] = {}
    for i, chunk in enumerate(bundle.chunks):
        by_doc.setdefault(doc_lookup[chunk.doc_id], []).append((chunk.position, i))
    cc_pairs: set[tuple[int, int]] = set()
    for chunk_list in by_doc.values():
        chunk_list.sort()
        for (_, i), (_, j) in zip(chunk_list, chunk_list[1:]):
            cc_pairs.add((min(i, j), max(i, j)))

    cd_pairs = tuple((i, doc_lookup[chunk.doc_id]) for i, chunk in enumerate(bundle.chunks))

    oo_sorted = sorted(oo_pred)
    edges = {
        EdgeKind.OO: EdgeSet(
            EdgeKind.OO, tuple(oo_sorted), tuple(oo_pred[p] for p in oo_sorted)
        ),
        EdgeKind.OC: EdgeSet(EdgeKind.OC, tuple(sorted(oc_pairs))),
        EdgeKind.OD: EdgeSet(EdgeKind.OD, tuple(sorted(od_pairs))),
        EdgeKind.CC: EdgeSet(EdgeKind.CC, tuple(sorted(cc_pairs))),
        EdgeKind.CD: EdgeSet(EdgeKind.CD, tuple(sorted(cd_pairs))),
    }
    counts = {
        Level.ENTITY: len(entity_table),
        Level.CHUNK: len(bundle.chunks),
        Level.DOCUMENT: len(bundle.documents),
    }
    return MultiLKG(
        entity_table=tuple(entity_table),
        chunk_ids=tuple(c.chunk_id for c in bundle.chunks),
        chunk_docs=tuple(doc_lookup[c.doc_id] for c in bundle.chunks),
        chunk_positions=tuple(c.position for c in bundle.chunks),
        chunk_texts=tuple(c.text for c in bundle.chunks),
        doc_ids=tuple(d.doc_id for d in bundle.documents),
        doc_titles=tuple(d.title for d in bundle.documents),
        doc_texts=tuple(d.text for d in bundle.documents),
        edges=edges,
        triples=tuple(occurrences),
        report=BuildReport(len(bundle.triples), self_loops),
        _adjacency=_build_adjacency(edges, counts),
        _doc_lookup=doc_lookup,
    )


def neighbors(g: MultiLKG, node: NodeRef, kind: EdgeKind) -> list[NodeRef]:
    """Neighbors of a node along one edge kind, ascending index order.

    A kind incompatible with the node's level yields an empty list.
    """
    if node.index < 0 or node.index >= g.level_count(node.level):
        raise IndexError(f"node {node} out of range")
    per_level = g._adjacency[kind]
    if node.level not in per_level:
        return []
    level_a, level_b = KIND_LEVELS[kind]
    other = level_b if node.level is level_a else level_a
    return [NodeRef(other, j) for j in per_level[node.level][node.index]]


def graph_stats(g: MultiLKG) -> GraphStats:
    return GraphStats(
        entities=g.n_entities,
        chunks=g.n_chunks,
        documents=g.n_documents,
        oo=len(g.edges[EdgeKind.OO].pairs),
        oc=len(g.edges[EdgeKind.OC].pairs),
        od=len(g.edges[EdgeKind.OD].pairs),
        cc=len(g.edges[EdgeKind.CC].pairs),
        cd=len(g.edges[EdgeKind.CD].pairs),
    )


GRAPH_FORMAT = "mlkg-graph"
GRAPH_VERSION = 1


def dump_graph(g: MultiLKG, path: str | Path) -> None:
    """Write the graph as line-delimited records (loadable by load_graph)."""
    with open(path, "w", encoding="utf-8") as handle:
        def emit(obj: dict) -> None:
            handle.write(json.dumps(obj, ensure_ascii=False) + "\n")

        emit(
            {
                "kind": "header",
                "format": GRAPH_FORMAT,
                "version": GRAPH_VERSION,
                "entities": g.n_entities,
                "chunks": g.n_chunks,
                "documents": g.n_documents,
            }
        )
        for i, doc_id in enumerate(g.doc_ids):
            emit(
                {
                    "kind": "document",
                    "index": i,
                    "doc_id": doc_id,
                    "title": g.doc_titles[i],
                    "text": g.doc_texts[i],
                }
            )
        for i, chunk_id in enumerate(g.chunk_ids):
            emit(
                {
                    "kind": "chunk",
                    "index": i,
                    "chunk_id": chunk_id,
                    "doc": g.chunk_docs[i],
                    "position": g.chunk_positions[i],
                    "text": g.chunk_texts[i],
                }
            )
        for i, surface in enumerate(g.entity_table):
            emit({"kind": "entity", "index": i, "surface": surface})
        for kind, edge_set in g.edges.items():
            for j, (a, b) in enumerate(edge_set.pairs):
                obj = {"kind": "edge", "edge": kind.value, "a": a, "b": b}
                if edge_set.attributes is not None:
                    obj["predicate"] = edge_set.attributes[j]
                emit(obj)
        for t in g.triples:
            emit(
                {
                    "kind": "triple",
                    "subject": t.subject,
                    "predicate": t.predicate,
                    "object": t.object,
                    "chunk": t.chunk,
                    "doc": t.doc,
                }
            )
        emit(
            {
                "kind": "report",
                "triples_total": g.report.triples_total,
                "self_loop_triples_skipped": g.report.self_loop_triples_skipped,
            }
        )


def load_graph(path: str | Path) -> MultiLKG:
    """Read a graph dump, validating the header and all index references."""
    entities: dict[int, str] = {}
    docs: dict[int, dict] = {}
    chunks: dict[int, dict] = {}
    edge_pairs: dict[EdgeKind, list[tuple[int, int]]] = {k: [] for k in EdgeKind}
    oo_attrs: list[str] = []
    triples: list[TripleOcc] = []
    header: dict | None = None
    report = None

    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{line_no}: malformed JSON ({exc.msg})") from exc
            kind = obj.get("kind")
            if kind == "header":
                if obj.get("format") != GRAPH_FORMAT or obj.get("version") != GRAPH_VERSION:
                    raise CorpusError(
                        f"{path}: unsupported graph format "
                        f"{obj.get('format')!r} v{obj.get('version')!r}"
                    )
                header = obj
            elif kind == "document":
                docs[obj["index"]] = obj
            elif kind == "chunk":
                chunks[obj["index"]] = obj
            elif kind == "entity":
                entities[obj["index"]] = obj["surface"]
            elif kind == "edge":
                edge_kind = EdgeKind(obj["edge"])
                edge_pairs[edge_kind].append((obj["a"], obj["b"]))
                if edge_kind is EdgeKind.OO:
                    oo_attrs.append(obj["predicate"])
            elif kind == "triple":
                triples.append(
                    TripleOcc(
                        obj["subject"], obj["predicate"], obj["object"], obj["chunk"], obj["doc"]
                    )
                )
            elif kind == "report":
                report = BuildReport(obj["triples_total"], obj["self_loop_triples_skipped"])
            else:
                raise CorpusError(f"{path}:{line_no}: unknown record kind {kind!r}")

    if header is None:
        raise CorpusError(f"{path}: missing graph header")
    n_entities, n_chunks, n_docs = header["entities"], header["chunks"], header["documents"]
    for name, table, expected in (
        ("entity", entities, n_entities),
        ("chunk", chunks, n_chunks),
        ("document", docs, n_docs),
    ):
        if sorted(table) != list(range(expected)):
            raise CorpusError(f"{path}: {name} indices do not cover 0..{expected - 1}")
    counts = {Level.ENTITY: n_entities, Level.CHUNK: n_chunks, Level.DOCUMENT: n_docs}
    for kind, pairs in edge_pairs.items():
        level_a, level_b = KIND_LEVELS[kind]
        for a, b in pairs:
            if not (0 <= a < counts[level_a] and 0 <= b < counts[level_b]):
                raise CorpusError(f"{path}: {kind.value} edge ({a}, {b}) out of range")

    edges = {
        kind: EdgeSet(
            kind,
            tuple(pairs),
            tuple(oo_attrs) if kind is EdgeKind.OO else None,
        )
        for kind, pairs in edge_pairs.items()
    }
    doc_ids = tuple(docs[i]["doc_id"] for i in range(n_docs))
    return MultiLKG(
        entity_table=tuple(entities[i] for i in range(n_entities)),
        chunk_ids=tuple(chunks[i]["chunk_id"] for i in range(n_chunks)),
        chunk_docs=tuple(chunks[i]["doc"] for i in range(n_chunks)),
        chunk_positions=tuple(chunks[i]["position"] for i in range(n_chunks)),
        chunk_texts=tuple(chunks[i]["text"] for i in range(n_chunks)),
        doc_ids=doc_ids,
        doc_titles=tuple(docs[i]["title"] for i in range(n_docs)),
        doc_texts=tuple(docs[i]["text"] for i in range(n_docs)),
        edges=edges,
        triples=tuple(triples),
        report=report if report is not None else BuildReport(len(triples), 0),
        _adjacency=_build_adjacency(edges, counts),
        _doc_lookup={doc_id: i for i, doc_id in enumerate(doc_ids)},
    )
