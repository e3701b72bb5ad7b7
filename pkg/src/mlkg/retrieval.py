"""Document scoring, top-k ranking, and recall@k evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingSource, embed_graph, embed_text
from .graph import Level, MultiLKG
from .model import GraphPlan, QsgnnParams, build_plan, forward

_COS_GUARD = 1e-12


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; 0 when either operand has norm < 1e-12."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < _COS_GUARD or nv < _COS_GUARD:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def cosine_rows(matrix: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cosine of each matrix row against v, with the same zero-guard."""
    norms = np.linalg.norm(matrix, axis=1)
    nv = float(np.linalg.norm(v))
    if nv < _COS_GUARD:
        return np.zeros(matrix.shape[0], dtype=np.float64)
    valid = norms >= _COS_GUARD
    dots = matrix @ v
    return np.where(valid, dots / np.where(valid, norms * nv, 1.0), 0.0)


@dataclass(frozen=True)
class RetrievalResult:
    ranked: tuple[tuple[str, float], ...]
    k: int


@dataclass(frozen=True)
class EvalExample:
    query: str
    gold_doc_ids: tuple[str, ...]
    hop: int | None = None


@dataclass(frozen=True)
class HopBucket:
    count: int
    recall_at_2: float
    recall_at_5: float


@dataclass(frozen=True)
class EvalReport:
    per_query: tuple[tuple[str, float, float], ...]  # (query, recall@2, recall@5)
    mean_recall_at_2: float
    mean_recall_at_5: float
    by_hop: dict[str, HopBucket]


def score_documents(
    params: QsgnnParams,
    g: MultiLKG,
    query_text: str,
    source: EmbeddingSource,
    raw: dict[Level, np.ndarray] | None = None,
    plan: GraphPlan | None = None,
    level: Level = Level.DOCUMENT,
) -> np.ndarray:
    """Cosine between the projected query and each document's final
    representation, aligned with document index order.

    level=Level.CHUNK scores chunk representations instead and assigns
    each document the max over its chunks.
    """
    raw = raw if raw is not None else embed_graph(source, g)
    raw_query = embed_text(source, query_text)
    result = forward(params, g, raw, raw_query, plan=plan)
    query_vec = result.query.data[0]
    if level is Level.DOCUMENT:
        return cosine_rows(result.states[Level.DOCUMENT].data, query_vec)
    if level is Level.CHUNK:
        chunk_scores = cosine_rows(result.states[Level.CHUNK].data, query_vec)
        doc_scores = np.full(g.n_documents, -np.inf)
        for chunk_idx, doc_idx in enumerate(g.chunk_docs):
            doc_scores[doc_idx] = max(doc_scores[doc_idx], chunk_scores[chunk_idx])
        return doc_scores
    raise ValueError(f"cannot score level {level}")


def top_k(scores: np.ndarray, doc_ids: tuple[str, ...], k: int) -> RetrievalResult:
    """Top-k documents by descending score, ties by ascending doc_id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    order = sorted(range(len(doc_ids)), key=lambda i: (-scores[i], doc_ids[i]))
    cut = order[: min(k, len(doc_ids))]
    return RetrievalResult(tuple((doc_ids[i], float(scores[i])) for i in cut), k)


def recall_at_k(result: RetrievalResult, gold_doc_ids, k: int) -> float:
    """|top-k retrieved ∩ gold| / |gold|."""
    gold = set(gold_doc_ids)
    if not gold:
        raise ValueError("empty gold set")
    retrieved = {doc_id for doc_id, _ in result.ranked[:k]}
    return len(retrieved & gold) / len(gold)


def evaluate(
    params: QsgnnParams,
    g: MultiLKG,
    eval_examples: list[EvalExample],
    source: EmbeddingSource,
    level: Level = Level.DOCUMENT,
) -> EvalReport:
    """Recall@2 and recall@5 per query plus aggregate and per-hop means.

    Hop buckets key on the example's hop field when present, otherwise
    on its gold-set size. Aggregation uses exact summation, so the
    report does not depend on example order.
    """
    raw = embed_graph(source, g)
    plan = build_plan(g)
    per_query: list[tuple[str, float, float]] = []
    buckets: dict[str, list[tuple[float, float]]] = {}
    for example in eval_examples:
        scores = score_documents(params, g, example.query, source, raw=raw, plan=plan, level=level)
        ranked = top_k(scores, g.doc_ids, 5)
        r2 = recall_at_k(ranked, example.gold_doc_ids, 2)
        r5 = recall_at_k(ranked, example.gold_doc_ids, 5)
        per_query.append((example.query, r2, r5))
        hop = example.hop if example.hop is not None else len(set(example.gold_doc_ids))
        buckets.setdefault(str(hop), []).append((r2, r5))

    def exact_mean(values: list[float]) -> float:
        return math.fsum(sorted(values)) / len(values) if values else 0.0

    by_hop = {
        key: HopBucket(
            count=len(pairs),
            recall_at_2=exact_mean([p[0] for p in pairs]),
            recall_at_5=exact_mean([p[1] for p in pairs]),
        )
        for key, pairs in sorted(buckets.items())
    }
    return EvalReport(
        per_query=tuple(per_query),
        mean_recall_at_2=exact_mean([r2 for _, r2, _ in per_query]),
        mean_recall_at_5=exact_mean([r5 for _, _, r5 in per_query]),
        by_hop=by_hop,
    )


def read_eval_examples(path: str | Path) -> list[EvalExample]:
    """Line-delimited {query, gold_doc_ids, optional hop} records."""
    examples: list[EvalExample] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: malformed JSON ({exc.msg})") from exc
            if "query" not in obj or "gold_doc_ids" not in obj:
                raise ValueError(f"{path}:{line_no}: need query and gold_doc_ids")
            if not obj["gold_doc_ids"]:
                raise ValueError(f"{path}:{line_no}: empty gold_doc_ids")
            examples.append(
                EvalExample(obj["query"], tuple(obj["gold_doc_ids"]), obj.get("hop"))
            )
    return examples


def write_eval_examples(examples: list[EvalExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for example in examples:
            obj: dict = {"query": example.query, "gold_doc_ids": list(example.gold_doc_ids)}
            if example.hop is not None:
                obj["hop"] = example.hop
            handle.write(json.dumps(obj, ensure_ascii=False) + "\n")


def report_to_dict(report: EvalReport) -> dict:
    return {
        "mean_recall_at_2": report.mean_recall_at_2,
        "mean_recall_at_5": report.mean_recall_at_5,
        "queries": len(report.per_query),
        "by_hop": {
            key: {
                "count": bucket.count,
                "recall_at_2": bucket.recall_at_2,
                "recall_at_5": bucket.recall_at_5,
            }
            for key, bucket in report.by_hop.items()
        },
    }
