"""Raw text embeddings: deterministic feature hashing or file lookup.

Hashed mode is the built-in provider: signed feature hashing over word
tokens and character 3-grams, L2-normalized. File mode serves
precomputed vectors from a line-delimited {key, vector} file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .graph import Level, MultiLKG


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class HashedSource:
    seed: int
    dim: int = 512

    def __post_init__(self):
        if self.dim < 8:
            raise EmbeddingError(f"embedding dim must be >= 8, got {self.dim}")


@dataclass(frozen=True)
class FileSource:
    path: str
    dim: int

    def __post_init__(self):
        if self.dim < 8:
            raise EmbeddingError(f"embedding dim must be >= 8, got {self.dim}")


EmbeddingSource = HashedSource | FileSource


def _hash_features(text: str) -> list[str]:
    # Case-folded word tokens plus character 3-grams within each token.
    features = []
    for token in text.lower().split():
        features.append(token)
        features.extend(token[i : i + 3] for i in range(len(token) - 2))
    return features


def _hashed_vector(seed: int, dim: int, text: str) -> np.ndarray:
    key = (seed % (1 << 64)).to_bytes(8, "little")
    vec = np.zeros(dim, dtype=np.float64)
    for feature in _hash_features(text):
        digest = hashlib.blake2b(feature.encode("utf-8"), key=key, digest_size=8).digest()
        value = int.from_bytes(digest, "little")
        index = (value >> 1) % dim
        vec[index] += 1.0 if value & 1 == 0 else -1.0
    return vec


def _unit(vec: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(vec)):
        raise EmbeddingError(f"non-finite embedding for {what}")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        # Exact cancellation; perturb the first coordinate and renormalize.
        vec = vec.copy()
        vec[0] += 1.0
        norm = float(np.linalg.norm(vec))
    return vec / norm


@lru_cache(maxsize=None)
def _load_embedding_file(path: str, dim: int) -> dict[str, np.ndarray]:
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingError(f"{path}:{line_no}: malformed JSON ({exc.msg})") from exc
            key, vector = obj["key"], obj["vector"]
            if len(vector) != dim:
                raise EmbeddingError(
                    f"{path}:{line_no}: vector for {key!r} has length {len(vector)}, expected {dim}"
                )
            table[key] = _unit(np.asarray(vector, dtype=np.float64), f"key {key!r}")
    return table


def embed_text(source: EmbeddingSource, text: str) -> np.ndarray:
    """Embed one text as a unit-norm float64 vector of the source's dim."""
    if isinstance(source, HashedSource):
        if not text.split():
            raise EmbeddingError("cannot embed all-whitespace text")
        return _unit(_hashed_vector(source.seed, source.dim, text), repr(text[:40]))
    table = _load_embedding_file(str(Path(source.path)), source.dim)
    if text not in table:
        raise EmbeddingError(f"missing embedding for key {text!r}")
    return table[text].copy()


def document_key(title: str, text: str) -> str:
    return title + " " + text


def embed_graph(source: EmbeddingSource, g: MultiLKG) -> dict[Level, np.ndarray]:
    """Per-level raw embedding matrices: entity surfaces, chunk texts,
    and documents as title + " " + full text."""
    def matrix(texts) -> np.ndarray:
        if not texts:
            return np.zeros((0, source.dim), dtype=np.float64)
        return np.stack([embed_text(source, t) for t in texts])

    return {
        Level.ENTITY: matrix(g.entity_table),
        Level.CHUNK: matrix(g.chunk_texts),
        Level.DOCUMENT: matrix(
            [document_key(t, x) for t, x in zip(g.doc_titles, g.doc_texts)]
        ),
    }
