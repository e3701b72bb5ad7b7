"""Corpus ingestion: parse, normalize, and validate extraction output.

The input is a UTF-8 line-delimited file with one self-describing JSON
object per line. Each object carries a ``kind`` field (document, chunk,
or triple) plus the fields of the matching record type.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path


class CorpusError(ValueError):
    """Raised for malformed corpus files or invariant violations."""


@dataclass(frozen=True)
class DocumentRecord:
    doc_id: str
    title: str
    text: str


@dataclass(frozen=True)
class ChunkRecord:
    chunk_id: str
    doc_id: str
    position: int
    text: str


@dataclass(frozen=True)
class TripleRecord:
    subject: str
    predicate: str
    object: str
    chunk_id: str
    doc_id: str


@dataclass(frozen=True)
class CorpusBundle:
    documents: tuple[DocumentRecord, ...]
    chunks: tuple[ChunkRecord, ...]
    triples: tuple[TripleRecord, ...]


_REQUIRED_FIELDS = {
    "document": (("doc_id", str), ("title", str), ("text", str)),
    "chunk": (("chunk_id", str), ("doc_id", str), ("position", int), ("text", str)),
    "triple": (
        ("subject", str),
        ("predicate", str),
        ("object", str),
        ("chunk_id", str),
        ("doc_id", str),
    ),
}


def normalize_entity(surface: str) -> str:
    """Lowercase, trim, and collapse internal whitespace runs to one space.

    Raises CorpusError("empty entity ...") when nothing survives.
    """
    normalized = " ".join(surface.split()).lower()
    if not normalized:
        raise CorpusError(f"empty entity after normalization: {surface!r}")
    return normalized


def _normalize_or_empty(surface: str) -> str:
    return " ".join(surface.split()).lower()


def _parse_line(line_no: int, line: str):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise CorpusError(f"line {line_no}: expected an object, got {type(obj).__name__}")
    kind = obj.get("kind")
    if kind not in _REQUIRED_FIELDS:
        raise CorpusError(f"line {line_no}: unknown kind {kind!r}")
    fields = {}
    for name, typ in _REQUIRED_FIELDS[kind]:
        if name not in obj:
            raise CorpusError(f"line {line_no}: {kind} record missing field {name!r}")
        value = obj[name]
        # bool is an int subclass; reject it for integer fields.
        if not isinstance(value, typ) or (typ is int and isinstance(value, bool)):
            raise CorpusError(
                f"line {line_no}: field {name!r} expected {typ.__name__}, "
                f"got {type(value).__name__}"
            )
        fields[name] = value
    return kind, fields


def parse_corpus(path: str | Path) -> CorpusBundle:
    """Read a line-delimited corpus file into a validated CorpusBundle.

    Record order is preserved. Any malformed line, duplicate id, or
    dangling reference aborts with a CorpusError naming the problem.
    """
    documents: list[DocumentRecord] = []
    chunks: list[ChunkRecord] = []
    triples: list[TripleRecord] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            kind, fields = _parse_line(line_no, line)
            if kind == "document":
                documents.append(DocumentRecord(**fields))
            elif kind == "chunk":
                chunks.append(ChunkRecord(**fields))
            else:
                triples.append(TripleRecord(**fields))
    bundle = CorpusBundle(tuple(documents), tuple(chunks), tuple(triples))
    violations = validate_bundle(bundle)
    if violations:
        listing = "\n  ".join(violations)
        raise CorpusError(f"invalid corpus {path}:\n  {listing}")
    return bundle


def validate_bundle(bundle: CorpusBundle) -> list[str]:
    """Return a list of invariant violations; empty iff the bundle is valid."""
    violations: list[str] = []

    doc_index: dict[str, int] = {}
    for i, doc in enumerate(bundle.documents):
        if not doc.doc_id:
            violations.append(f"document #{i}: empty doc_id")
        if doc.doc_id in doc_index:
            violations.append(
                f"duplicate doc_id {doc.doc_id!r} (documents #{doc_index[doc.doc_id]} and #{i})"
            )
        else:
            doc_index[doc.doc_id] = i
        if not doc.text:
            violations.append(f"document {doc.doc_id!r}: empty text")

    chunk_doc: dict[str, str] = {}
    chunk_index: dict[str, int] = {}
    positions: dict[str, list[int]] = {}
    for i, chunk in enumerate(bundle.chunks):
        if chunk.chunk_id in chunk_index:
            violations.append(
                f"duplicate chunk_id {chunk.chunk_id!r} "
                f"(chunks #{chunk_index[chunk.chunk_id]} and #{i})"
            )
        else:
            chunk_index[chunk.chunk_id] = i
            chunk_doc[chunk.chunk_id] = chunk.doc_id
        if chunk.doc_id not in doc_index:
            violations.append(f"chunk {chunk.chunk_id!r}: unknown doc_id {chunk.doc_id!r}")
        else:
            positions.setdefault(chunk.doc_id, []).append(chunk.position)

    for doc_id, pos in positions.items():
        if len(set(pos)) != len(pos):
            violations.append(f"document {doc_id!r}: duplicate chunk positions")
        elif sorted(pos) != list(range(len(pos))):
            violations.append(
                f"document {doc_id!r}: chunk positions {sorted(pos)} not contiguous from 0"
            )
    for doc_id in doc_index:
        if doc_id not in positions:
            violations.append(f"document {doc_id!r}: no chunks")

    for i, triple in enumerate(bundle.triples):
        tag = f"triple #{i} ({triple.subject!r}, {triple.predicate!r}, {triple.object!r})"
        if triple.chunk_id not in chunk_index:
            violations.append(f"{tag}: unknown chunk_id {triple.chunk_id!r}")
        elif chunk_doc[triple.chunk_id] != triple.doc_id:
            violations.append(
                f"{tag}: chunk {triple.chunk_id!r} belongs to "
                f"{chunk_doc[triple.chunk_id]!r}, not {triple.doc_id!r}"
            )
        if triple.doc_id not in doc_index:
            violations.append(f"{tag}: unknown doc_id {triple.doc_id!r}")
        if not _normalize_or_empty(triple.subject):
            violations.append(f"{tag}: empty subject after normalization")
        if not _normalize_or_empty(triple.object):
            violations.append(f"{tag}: empty object after normalization")

    return violations


def serialize_corpus(bundle: CorpusBundle, path: str | Path) -> None:
    """Write a bundle back to the line-delimited format parse_corpus reads."""
    with open(path, "w", encoding="utf-8") as handle:
        for kind, records in (
            ("document", bundle.documents),
            ("chunk", bundle.chunks),
            ("triple", bundle.triples),
        ):
            for record in records:
                obj = {"kind": kind, **asdict(record)}
                handle.write(json.dumps(obj, ensure_ascii=False) + "\n")
