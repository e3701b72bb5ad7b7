"""Contrastive training: hard negatives, the NT-Xent objective, and the
pretrain/finetune loop with holdout-based checkpoint selection."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import substream
from .embeddings import EmbeddingSource, embed_graph, embed_text
from .grad import BatchItem, adam_step, backward_batch, init_adam
from .graph import Level, MultiLKG
from .model import QsgnnParams, build_plan, save_params
from .retrieval import cosine, cosine_rows, recall_at_k, score_documents, top_k

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingExample:
    query_text: str
    support_doc_ids: tuple[str, ...]
    negatives: tuple[str, ...] = ()


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    max_epochs: int
    checkpoint_every: int
    tau: float = 1.0
    negatives_k: int = 30
    holdout_fraction: float = 0.05
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.negatives_k < 1:
            raise ValueError("negatives_k must be >= 1")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in [0, 1)")
        if self.lr < 0.0:
            raise ValueError("lr must be non-negative")
        if self.max_epochs < 1 or self.checkpoint_every < 1:
            raise ValueError("max_epochs and checkpoint_every must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def pretrain(cls, **overrides) -> "TrainConfig":
        base = cls(lr=1e-4, max_epochs=5, checkpoint_every=2000)
        return replace(base, **overrides) if overrides else base

    @classmethod
    def finetune(cls, **overrides) -> "TrainConfig":
        base = cls(lr=5e-4, max_epochs=3, checkpoint_every=100)
        return replace(base, **overrides) if overrides else base


def sample_hard_negatives(
    g: MultiLKG,
    raw_doc_matrix: np.ndarray,
    raw_query: np.ndarray,
    support_ids: tuple[str, ...],
    k: int,
    rng: np.random.Generator,
) -> tuple[str, ...]:
    """The k non-support documents most cosine-similar to the query in
    raw embedding space; ties broken by ascending doc id. When fewer
    than k candidates exist, all are taken and the remainder is padded
    by uniform draws (with replacement) from the candidates."""
    support = set(support_ids)
    candidates = [i for i, doc_id in enumerate(g.doc_ids) if doc_id not in support]
    if not candidates:
        raise ValueError("no non-support documents to sample negatives from")
    sims = cosine_rows(raw_doc_matrix[candidates], raw_query)
    order = sorted(range(len(candidates)), key=lambda j: (-sims[j], g.doc_ids[candidates[j]]))
    chosen = [g.doc_ids[candidates[j]] for j in order[:k]]
    while len(chosen) < k:
        chosen.append(g.doc_ids[candidates[int(rng.integers(len(candidates)))]])
    return tuple(chosen)


def nt_xent_loss(
    q_vec: np.ndarray,
    positive_doc_vec: np.ndarray,
    negative_doc_vecs: np.ndarray,
    tau: float,
) -> float:
    """-log( exp(cos(q,h+)/tau) / (exp(cos(q,h+)/tau) + sum_neg exp(cos(q,h-)/tau)) )."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    negative_doc_vecs = np.atleast_2d(negative_doc_vecs)
    if negative_doc_vecs.shape[0] < 1:
        raise ValueError("need at least one negative")
    scores = np.concatenate(
        [[cosine(q_vec, positive_doc_vec)], cosine_rows(negative_doc_vecs, q_vec)]
    )
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("non-finite similarity input")
    z = scores / tau
    m = z.max()
    return float(m + np.log(np.sum(np.exp(z - m))) - z[0])


@dataclass
class Checkpoint:
    step: int
    loss: float
    holdout_recall_at_5: float | None
    params: QsgnnParams
    path: Path | None = None


@dataclass
class TrainResult:
    best: QsgnnParams
    best_step: int
    checkpoints: list[Checkpoint]
    step_losses: list[float]
    holdout_size: int


def _validate_examples(
    g: MultiLKG, examples: list[TrainingExample], k: int
) -> None:
    if not examples:
        raise ValueError("no training examples")
    for i, example in enumerate(examples):
        if not example.support_doc_ids:
            raise ValueError(f"example #{i}: empty support set")
        for doc_id in (*example.support_doc_ids, *example.negatives):
            g.doc_index(doc_id)
        if example.negatives:
            if len(example.negatives) != k:
                raise ValueError(
                    f"example #{i}: {len(example.negatives)} negatives, expected {k}"
                )
            overlap = set(example.support_doc_ids) & set(example.negatives)
            if overlap:
                raise ValueError(f"example #{i}: support and negatives overlap: {overlap}")


def _atomic_save(params: QsgnnParams, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    save_params(params, tmp)
    os.replace(tmp, path)


def train(
    g: MultiLKG,
    examples: list[TrainingExample],
    config: TrainConfig,
    params: QsgnnParams,
    source: EmbeddingSource,
    out_dir: str | Path | None = None,
    mode: str = "pretrain",
) -> TrainResult:
    """Shuffle, split a holdout, and run epochs of batched NT-Xent
    updates. Checkpoints are taken every checkpoint_every steps and at
    the end; the checkpoint with the best holdout recall@5 wins (final
    checkpoint when the holdout is empty). The input params object is
    not mutated."""
    _validate_examples(g, examples, config.negatives_k)
    params = params.copy()
    raw = embed_graph(source, g)
    plan = build_plan(g)
    rng_shuffle = substream(config.seed, "shuffle")
    rng_negatives = substream(config.seed, "negatives")

    query_cache: dict[str, np.ndarray] = {}

    def query_vec(text: str) -> np.ndarray:
        if text not in query_cache:
            query_cache[text] = embed_text(source, text)
        return query_cache[text]

    resolved: list[TrainingExample] = []
    for example in examples:
        if example.negatives:
            resolved.append(example)
        else:
            negatives = sample_hard_negatives(
                g,
                raw[Level.DOCUMENT],
                query_vec(example.query_text),
                example.support_doc_ids,
                config.negatives_k,
                rng_negatives,
            )
            resolved.append(replace(example, negatives=negatives))

    order = rng_shuffle.permutation(len(resolved))
    shuffled = [resolved[i] for i in order]
    n_holdout = int(len(shuffled) * config.holdout_fraction)
    holdout, train_set = shuffled[:n_holdout], shuffled[n_holdout:]
    if not train_set:
        raise ValueError("holdout fraction leaves no training examples")
    if not holdout:
        log.warning("holdout is empty; final checkpoint will be selected")

    items = [
        BatchItem(
            query_vec(ex.query_text),
            tuple(g.doc_index(d) for d in ex.support_doc_ids),
            tuple(g.doc_index(d) for d in ex.negatives),
        )
        for ex in train_set
    ]

    def holdout_recall() -> float | None:
        if not holdout:
            return None
        recalls = []
        for ex in holdout:
            scores = score_documents(params, g, ex.query_text, source, raw=raw, plan=plan)
            recalls.append(recall_at_k(top_k(scores, g.doc_ids, 5), ex.support_doc_ids, 5))
        return math.fsum(sorted(recalls)) / len(recalls)

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    adam = init_adam(params, config.lr)
    checkpoints: list[Checkpoint] = []
    step_losses: list[float] = []
    step = 0

    def take_checkpoint(loss: float) -> None:
        recall = holdout_recall()
        ckpt = Checkpoint(step, loss, recall, params.copy())
        if out_path is not None:
            step_dir = out_path / f"step-{step}"
            step_dir.mkdir(parents=True, exist_ok=True)
            ckpt.path = step_dir / "params.bin"
            _atomic_save(ckpt.params, ckpt.path)
            manifest = {
                "step": step,
                "loss": loss,
                "holdout_recall_at_5": recall,
                "mode": mode,
            }
            (step_dir / "manifest.json").write_text(
                json.dumps(manifest, sort_keys=True) + "\n", encoding="utf-8"
            )
        checkpoints.append(ckpt)

    previous_epoch_loss = None
    for epoch in range(config.max_epochs):
        perm = rng_shuffle.permutation(len(items))
        epoch_losses = []
        for start in range(0, len(perm), config.batch_size):
            batch = [items[i] for i in perm[start : start + config.batch_size]]
            loss, grads = backward_batch(params, plan, raw, batch, config.tau)
            adam_step(adam, params, grads)
            step += 1
            step_losses.append(loss)
            epoch_losses.append(loss)
            if step % config.checkpoint_every == 0:
                take_checkpoint(loss)
        epoch_loss = math.fsum(epoch_losses) / len(epoch_losses)
        if previous_epoch_loss is not None and epoch_loss >= previous_epoch_loss:
            log.warning(
                "epoch %d mean loss %.6f did not improve on %.6f",
                epoch,
                epoch_loss,
                previous_epoch_loss,
            )
        previous_epoch_loss = epoch_loss

    if not checkpoints or checkpoints[-1].step != step:
        take_checkpoint(step_losses[-1])

    scored = [c for c in checkpoints if c.holdout_recall_at_5 is not None]
    if scored:
        best_recall = max(c.holdout_recall_at_5 for c in scored)
        best = [c for c in scored if c.holdout_recall_at_5 == best_recall][-1]
    else:
        best = checkpoints[-1]
    return TrainResult(best.params, best.step, checkpoints, step_losses, len(holdout))


def read_examples(path: str | Path) -> list[TrainingExample]:
    """Line-delimited {query, support_doc_ids, optional negatives}."""
    examples: list[TrainingExample] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: malformed JSON ({exc.msg})") from exc
            if "query" not in obj or "support_doc_ids" not in obj:
                raise ValueError(f"{path}:{line_no}: need query and support_doc_ids")
            examples.append(
                TrainingExample(
                    obj["query"],
                    tuple(obj["support_doc_ids"]),
                    tuple(obj.get("negatives", ())),
                )
            )
    return examples


def write_examples(examples: list[TrainingExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for example in examples:
            obj: dict = {
                "query": example.query_text,
                "support_doc_ids": list(example.support_doc_ids),
            }
            if example.negatives:
                obj["negatives"] = list(example.negatives)
            handle.write(json.dumps(obj, ensure_ascii=False) + "\n")
