"""Benchmark the segment kernels and the full forward/backward pass on
every available backend (pure numpy vs the compiled extension).

Usage:
    python3 benchmarks/bench_kernels.py [--edges 1000 10000 100000]
        [--dim 64] [--repeats 7] [--docs 40] [--seed 0]

The per-kernel section times each segment reduction on synthetic CSR
segment layouts. The end-to-end section swaps the kernel table under
the autodiff tape and times one training step (batched loss + gradients)
on a generated corpus, which is where the kernels actually run.
"""

from __future__ import annotations

import argparse
import logging
import statistics
import sys
import time

import numpy as np

from mlkg import kernels
from mlkg.embeddings import HashedSource, embed_graph, embed_text
from mlkg.grad import BatchItem, backward_batch
from mlkg.graph import build_graph
from mlkg.model import ModelConfig, build_plan, init_params
from mlkg.synthetic import random_bundle
from mlkg.synthgen import gen_one_hop

log = logging.getLogger("mlkg.bench")

KERNEL_NAMES = (
    "segment_softmax",
    "segment_softmax_grad",
    "segment_weighted_sum",
    "segment_weighted_sum_grad",
    "scatter_add_rows",
)


def median_time(fn, repeats: int) -> float:
    fn()  # warm up allocations and code paths
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def segment_layout(rng: np.random.Generator, n_edges: int, dim: int):
    """Random CSR segments averaging ~8 edges, plus matching operands."""
    lengths = []
    total = 0
    while total < n_edges:
        length = int(rng.integers(1, 16))
        lengths.append(length)
        total += length
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    n = int(offsets[-1])
    n_seg = len(lengths)
    logits = rng.standard_normal(n)
    weights = kernels.py_segment_softmax(logits, offsets)
    values = rng.standard_normal((n, dim))
    grad_weights = rng.standard_normal(n)
    grad_out = rng.standard_normal((n_seg, dim))
    indices = rng.integers(0, n_seg, size=n).astype(np.int64)
    calls = {
        "segment_softmax": (logits, offsets),
        "segment_softmax_grad": (weights, grad_weights, offsets),
        "segment_weighted_sum": (weights, values, offsets),
        "segment_weighted_sum_grad": (weights, values, offsets, grad_out),
        "scatter_add_rows": (values, indices, n_seg),
    }
    return n, calls


def bench_kernels(edge_counts: list[int], dim: int, repeats: int, seed: int) -> None:
    backends = kernels.available_backends()
    print(f"kernel benchmarks (median of {repeats}, dim={dim})")
    header = f"{'kernel':28s} {'edges':>8s} " + " ".join(
        f"{name:>12s}" for name in backends
    )
    if len(backends) > 1:
        header += f" {'speedup':>9s}"
    print(header)
    for n_edges in edge_counts:
        rng = np.random.default_rng(seed)
        actual_edges, calls = segment_layout(rng, n_edges, dim)
        for kernel_name in KERNEL_NAMES:
            args = calls[kernel_name]
            times = {}
            results = {}
            for backend_name, table in backends.items():
                impl = table[kernel_name]
                times[backend_name] = median_time(lambda: impl(*args), repeats)
                results[backend_name] = impl(*args)
            row = f"{kernel_name:28s} {actual_edges:8d} " + " ".join(
                f"{times[name] * 1e3:10.3f}ms" for name in backends
            )
            if len(backends) > 1:
                row += f" {times['python'] / times['cython']:8.2f}x"
            print(row)
            if len(backends) > 1:
                first, second = (results[name] for name in backends)
                pair = zip(first, second) if isinstance(first, tuple) else ((first, second),)
                worst = max(float(np.abs(a - b).max()) for a, b in pair)
                if worst > 1e-12:
                    log.warning("%s backends disagree by %.2e", kernel_name, worst)
        print()


def bench_training_step(docs: int, dim: int, repeats: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    g = build_graph(random_bundle(rng, n_docs=docs))
    source = HashedSource(seed, 64)
    raw = embed_graph(source, g)
    params = init_params(ModelConfig(raw_dim=64, dim=dim, layers=2), rng)
    plan = build_plan(g)
    texts = [q.question_text for q in gen_one_hop(g)[:8]]
    texts = texts or ["which entity links the archive?"]
    items = [
        BatchItem(
            embed_text(source, text),
            (int(rng.integers(g.n_documents)),),
            tuple(int(rng.integers(g.n_documents)) for _ in range(4)),
        )
        for text in texts
    ]
    print(
        f"training step benchmarks (batch {len(items)}, "
        f"{g.n_entities} entities / {g.n_chunks} chunks / {g.n_documents} documents, "
        f"dim={dim}, median of {repeats})"
    )
    originals = {name: getattr(kernels, name) for name in KERNEL_NAMES}
    try:
        for backend_name, table in kernels.available_backends().items():
            for name in KERNEL_NAMES:
                setattr(kernels, name, table[name])
            elapsed = median_time(
                lambda: backward_batch(params, plan, raw, items, tau=1.0), repeats
            )
            print(f"  loss+gradients [{backend_name:7s}] {elapsed * 1e3:10.2f}ms")
    finally:
        for name, impl in originals.items():
            setattr(kernels, name, impl)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--edges", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=7)
    parser.add_argument("--docs", type=int, default=40, help="corpus size for the step benchmark")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    print(f"active backend: {kernels.BACKEND} "
          f"(available: {', '.join(kernels.available_backends())})\n")
    bench_kernels(args.edges, args.dim, args.repeats, args.seed)
    bench_training_step(args.docs, args.dim, args.repeats, args.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
