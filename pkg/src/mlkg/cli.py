"""Command-line surface: build-graph, synth, pretrain, finetune,
retrieve, eval, grad-check, stats.

Every artifact-writing command refuses to overwrite existing outputs
without --force and drops a run manifest (resolved config, its hash,
versions, wall time, output digests) beside the outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import RunConfig, load_config, substream
from .corpus import CorpusError, parse_corpus
from .embeddings import EmbeddingError, FileSource, HashedSource
from .graph import build_graph, dump_graph, graph_stats, load_graph
from .grad import BatchItem, fd_check, fd_conditioned
from .model import ModelConfig, build_plan, init_params, load_params, save_params
from .retrieval import (
    evaluate,
    read_eval_examples,
    report_to_dict,
    score_documents,
    top_k,
)
from .synthetic import random_bundle
from .synthgen import emit_examples, gen_one_hop, gen_two_hop
from .training import TrainConfig, read_examples, train, write_examples
from .embeddings import embed_graph, embed_text
from .graph import Level

log = logging.getLogger("mlkg")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _collect_outputs(paths: list[Path]) -> dict[str, str]:
    outputs: dict[str, str] = {}
    for path in paths:
        if path.is_dir():
            for child in sorted(path.rglob("*")):
                if child.is_file():
                    outputs[str(child)] = _sha256(child)
        elif path.is_file():
            outputs[str(path)] = _sha256(path)
    return outputs


def _write_manifest(
    manifest_path: Path, command: str, cfg: RunConfig, outputs: list[Path], started: float
) -> None:
    manifest = {
        "command": command,
        "config": asdict(cfg),
        "config_hash": _config_hash(cfg),
        "seed": cfg.seed,
        "threads": cfg.effective_threads(),
        "versions": {
            "mlkg": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "kernels": kernels.BACKEND,
        },
        "wall_time_s": round(time.monotonic() - started, 6),
        "outputs": _collect_outputs(outputs),
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")
    log.info("manifest written to %s", manifest_path)


def _guard_output(path: Path, force: bool) -> None:
    exists = path.is_file() or (path.is_dir() and any(path.iterdir()))
    if exists and not force:
        raise FileExistsError(f"output {path} exists; pass --force to overwrite")


def _require(path: str, what: str) -> Path:
    if not path:
        raise ValueError(f"missing required flag --{what}")
    resolved = Path(path)
    if not resolved.exists():
        raise FileNotFoundError(f"--{what} path {resolved} does not exist")
    return resolved


def _source(cfg: RunConfig):
    if cfg.embed_file:
        return FileSource(cfg.embed_file, cfg.embed_dim)
    return HashedSource(cfg.embed_seed, cfg.embed_dim)


def _model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(
        raw_dim=cfg.embed_dim,
        dim=cfg.dim,
        layers=cfg.layers,
        use_query_attention=cfg.query_attention,
    )


def _train_config(cfg: RunConfig, mode: str) -> TrainConfig:
    base = TrainConfig.pretrain() if mode == "pretrain" else TrainConfig.finetune()
    return TrainConfig(
        lr=cfg.lr or base.lr,
        max_epochs=cfg.epochs or base.max_epochs,
        checkpoint_every=cfg.checkpoint_every or base.checkpoint_every,
        tau=cfg.tau,
        negatives_k=cfg.negatives,
        holdout_fraction=cfg.holdout,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
    )


def _load_cfg(args: argparse.Namespace) -> RunConfig:
    overrides = {
        key: getattr(args, key)
        for key in (
            "corpus", "graph", "out", "embed_file", "embed_dim", "embed_seed",
            "dim", "layers", "tau", "negatives", "lr", "epochs",
            "checkpoint_every", "holdout", "batch_size", "cap", "seed", "threads",
        )
        if getattr(args, key, None) is not None
    }
    if getattr(args, "no_query_attention", False):
        overrides["query_attention"] = False
    return load_config(getattr(args, "config", None), overrides)


def cmd_build_graph(args: argparse.Namespace) -> int:
    started = time.monotonic()
    cfg = _load_cfg(args)
    corpus_path = _require(cfg.corpus, "corpus")
    if not cfg.out:
        raise ValueError("missing required flag --out")
    out = Path(cfg.out)
    _guard_output(out, args.force)
    bundle = parse_corpus(corpus_path)
    g = build_graph(bundle)
    dump_graph(g, out)
    stats = graph_stats(g)
    log.info("graph: %s", asdict(stats))
    if g.report.self_loop_triples_skipped:
        log.info("skipped %d self-loop triples", g.report.self_loop_triples_skipped)
    _write_manifest(out.with_name(out.name + ".manifest.json"), "build-graph", cfg, [out], started)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    started = time.monotonic()
    cfg = _load_cfg(args)
    g = load_graph(_require(cfg.graph, "graph"))
    if not cfg.out:
        raise ValueError("missing required flag --out")
    out = Path(cfg.out)
    _guard_output(out, args.force)
    one_hop = gen_one_hop(g)
    two_hop = gen_two_hop(g, cap=cfg.cap, rng=substream(cfg.seed, "synth-cap"))
    questions = one_hop + two_hop
    log.info("generated %d one-hop and %d two-hop questions", len(one_hop), len(two_hop))
    source = _source(cfg) if args.with_negatives else None
    examples = emit_examples(questions, g, source, cfg.negatives, cfg.seed)
    write_examples(examples, out)
    outputs = [out]
    if args.eval_out:
        from .retrieval import EvalExample, write_eval_examples

        eval_path = Path(args.eval_out)
        _guard_output(eval_path, args.force)
        by_question = {
            (q.question_text, q.support_doc_ids): q for q in questions
        }
        evals = [
            EvalExample(q.question_text, q.support_doc_ids, q.hop)
            for q in by_question.values()
        ]
        write_eval_examples(evals, eval_path)
        outputs.append(eval_path)
    _write_manifest(out.with_name(out.name + ".manifest.json"), "synth", cfg, outputs, started)
    return 0


def _cmd_train(args: argparse.Namespace, mode: str) -> int:
    started = time.monotonic()
    cfg = _load_cfg(args)
    g = load_graph(_require(cfg.graph, "graph"))
    examples = read_examples(_require(args.examples, "examples"))
    if not cfg.out:
        raise ValueError("missing required flag --out")
    out = Path(cfg.out)
    _guard_output(out, args.force)
    out.mkdir(parents=True, exist_ok=True)
    if mode == "finetune":
        params = load_params(_require(args.init, "init"))
        if not cfg.query_attention:
            params = params.with_query_attention(False)
    else:
        params = init_params(_model_config(cfg), substream(cfg.seed, "init"))
    train_cfg = _train_config(cfg, mode)
    result = train(g, examples, train_cfg, params, _source(cfg), out_dir=out, mode=mode)
    best_path = out / "best-params.bin"
    save_params(result.best, best_path)
    log.info(
        "%s finished: %d steps, best checkpoint step %d (holdout size %d)",
        mode, len(result.step_losses), result.best_step, result.holdout_size,
    )
    _write_manifest(out / "run-manifest.json", mode, cfg, [out], started)
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    return _cmd_train(args, "pretrain")


def cmd_finetune(args: argparse.Namespace) -> int:
    return _cmd_train(args, "finetune")


def cmd_retrieve(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    g = load_graph(_require(cfg.graph, "graph"))
    params = load_params(_require(args.params, "params"))
    if not cfg.query_attention:
        params = params.with_query_attention(False)
    level = Level.CHUNK if args.level == "chunk" else Level.DOCUMENT
    scores = score_documents(params, g, args.query, _source(cfg), level=level)
    result = top_k(scores, g.doc_ids, args.k)
    for doc_id, score in result.ranked:
        print(json.dumps({"doc_id": doc_id, "score": round(score, 10)}))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    started = time.monotonic()
    cfg = _load_cfg(args)
    g = load_graph(_require(cfg.graph, "graph"))
    params = load_params(_require(args.params, "params"))
    if not cfg.query_attention:
        params = params.with_query_attention(False)
    examples = read_eval_examples(_require(args.examples, "examples"))
    level = Level.CHUNK if args.level == "chunk" else Level.DOCUMENT
    report = evaluate(params, g, examples, _source(cfg), level=level)
    payload = report_to_dict(report)
    print(json.dumps(payload, sort_keys=True))
    print(f"queries          {payload['queries']}", file=sys.stderr)
    print(f"mean recall@2    {payload['mean_recall_at_2']:.4f}", file=sys.stderr)
    print(f"mean recall@5    {payload['mean_recall_at_5']:.4f}", file=sys.stderr)
    for hop, bucket in payload["by_hop"].items():
        print(
            f"hop {hop}: n={bucket['count']} recall@2={bucket['recall_at_2']:.4f} "
            f"recall@5={bucket['recall_at_5']:.4f}",
            file=sys.stderr,
        )
    if cfg.out:
        out = Path(cfg.out)
        _guard_output(out, args.force)
        out.write_text(json.dumps(payload, sort_keys=True) + "\n", "utf-8")
        _write_manifest(out.with_name(out.name + ".manifest.json"), "eval", cfg, [out], started)
    return 0


def cmd_grad_check(args: argparse.Namespace) -> int:
    worst = 0.0
    for instance in range(args.instances):
        rng = substream(args.seed, f"grad-check-{instance}")
        for attempt in range(20):
            bundle = random_bundle(rng, n_docs=int(rng.integers(2, 5)))
            g = build_graph(bundle)
            source = HashedSource(seed=args.seed, dim=args.embed_dim)
            raw = embed_graph(source, g)
            config = ModelConfig(raw_dim=args.embed_dim, dim=args.dim, layers=args.layers)
            params = init_params(config, rng)
            queries = [f"which entity {t.predicate} {g.entity_table[t.object]}?" for t in g.triples[:2]]
            if not queries:
                queries = ["which entity links the archive?"]
            items = [
                BatchItem(
                    embed_text(source, q),
                    (int(rng.integers(g.n_documents)),),
                    tuple(
                        int(rng.integers(g.n_documents))
                        for _ in range(min(3, g.n_documents))
                    ),
                )
                for q in queries
            ]
            plan = build_plan(g)
            if fd_conditioned(params, plan, raw, items):
                break
            log.info(
                "instance %d draw %d sits on a guarded-cosine discontinuity; resampling",
                instance, attempt,
            )
        else:
            log.error("no well-conditioned instance found for seed %d", args.seed)
            return 1
        coord_seed = int(rng.integers(2**63))
        error = fd_check(
            params, plan, raw, items, tau=args.tau, eps=args.eps,
            samples_per_tensor=args.samples, rng=np.random.default_rng(coord_seed),
        )
        if error >= args.tolerance:
            # central differences straddling a relu kink inside the +/-eps
            # window look like mismatches; the same coordinates at eps/10
            # separate that artifact from a wrong gradient, which stays
            # wrong at every step size
            refined = fd_check(
                params, plan, raw, items, tau=args.tau, eps=args.eps / 10.0,
                samples_per_tensor=args.samples, rng=np.random.default_rng(coord_seed),
            )
            log.info(
                "instance %d: %.3e at eps=%.1e refines to %.3e at eps=%.1e",
                instance, error, args.eps, refined, args.eps / 10.0,
            )
            error = refined
        log.info("instance %d: max relative error %.3e", instance, error)
        worst = max(worst, error)
    print(json.dumps({"instances": args.instances, "max_relative_error": worst}))
    if worst >= args.tolerance:
        log.error("gradient check failed: %.3e >= %.3e", worst, args.tolerance)
        return 1
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    g = load_graph(_require(cfg.graph, "graph"))
    payload = asdict(graph_stats(g))
    payload["self_loop_triples_skipped"] = g.report.self_loop_triples_skipped
    print(json.dumps(payload, sort_keys=True))
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--seed", type=int, help="run seed (default 0)")
    parser.add_argument("--threads", type=int, help="worker threads (results are identical regardless)")
    parser.add_argument("--force", action="store_true", help="overwrite existing outputs")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _add_embedding_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embeddings", dest="embed_file", help="precomputed embedding file")
    parser.add_argument("--hash-dim", dest="embed_dim", type=int, help="hashed embedding dimension")
    parser.add_argument("--hash-seed", dest="embed_seed", type=int, help="hashed embedding seed")


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dim", type=int, help="model dimension n")
    parser.add_argument("--layers", type=int, help="message passing layers L")
    parser.add_argument(
        "--no-query-attention", action="store_true",
        help="disable the query alignment attention terms",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlkg",
        description="Query-conditioned multi-level knowledge-graph retrieval",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="build the three-level graph from a corpus file")
    p.add_argument("--corpus", help="line-delimited corpus file")
    p.add_argument("--out", help="graph output path")
    _add_common(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("synth", help="generate synthetic training questions from a graph")
    p.add_argument("--graph", help="graph file from build-graph")
    p.add_argument("--out", help="training examples output path")
    p.add_argument("--cap", type=int, help="max chains per bridge entity (default 10)")
    p.add_argument("--negatives", type=int, help="hard negatives per example (default 30)")
    p.add_argument(
        "--with-negatives", action="store_true",
        help="attach hard negatives now (otherwise resolved at training time)",
    )
    p.add_argument("--eval-out", help="also write an eval-format file of the questions")
    _add_embedding_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    for mode in ("pretrain", "finetune"):
        p = sub.add_parser(mode, help=f"{mode} on (question, documents) examples")
        p.add_argument("--graph", help="graph file")
        p.add_argument("--examples", help="training examples file")
        p.add_argument("--out", help="checkpoint directory")
        if mode == "finetune":
            p.add_argument("--init", help="initial parameter checkpoint", required=False)
        p.add_argument("--tau", type=float, help="softmax temperature (default 1.0)")
        p.add_argument("--negatives", type=int, help="hard negatives per example (default 30)")
        p.add_argument("--lr", type=float, help=f"learning rate (default {'1e-4' if mode == 'pretrain' else '5e-4'})")
        p.add_argument("--epochs", type=int, help=f"max epochs (default {5 if mode == 'pretrain' else 3})")
        p.add_argument("--checkpoint-every", type=int, help=f"steps between checkpoints (default {2000 if mode == 'pretrain' else 100})")
        p.add_argument("--holdout", type=float, help="holdout fraction for checkpoint selection (default 0.05)")
        p.add_argument("--batch-size", type=int, help="examples per step (default 32)")
        _add_embedding_flags(p)
        _add_model_flags(p)
        _add_common(p)
        p.set_defaults(func=cmd_pretrain if mode == "pretrain" else cmd_finetune)

    p = sub.add_parser("retrieve", help="rank documents for one query")
    p.add_argument("--graph", help="graph file")
    p.add_argument("--params", help="parameter checkpoint")
    p.add_argument("--query", required=True, help="query text")
    p.add_argument("-k", type=int, default=5, help="number of documents (default 5)")
    p.add_argument("--level", choices=("document", "chunk"), default="document",
                   help="score documents directly or via their best chunk")
    _add_embedding_flags(p)
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="recall@2/recall@5 over an eval file")
    p.add_argument("--graph", help="graph file")
    p.add_argument("--params", help="parameter checkpoint")
    p.add_argument("--examples", help="eval examples file")
    p.add_argument("--out", help="optional metrics output file")
    p.add_argument("--level", choices=("document", "chunk"), default="document")
    _add_embedding_flags(p)
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference gradient check on random instances")
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--samples", type=int, default=5, help="coordinate samples per tensor")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("stats", help="node and edge counts of a graph file")
    p.add_argument("--graph", help="graph file")
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (CorpusError, EmbeddingError, ValueError, OSError, FloatingPointError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
