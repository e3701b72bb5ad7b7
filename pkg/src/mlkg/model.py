"""Query-conditioned graph network over the three-level graph.

A forward pass projects raw embeddings through a shared bottleneck,
then runs L layers. Each layer updates entities (attention over
entity-entity edges), chunks (over chunk-chunk edges), chunks again
(from their entities), and documents (jointly from their entities and
chunks). Attention logits combine node-node similarity with a query
alignment term, so the learned representations depend on the query.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import EdgeKind, Level, MultiLKG

LN_EPS = 1e-5

CHECKPOINT_MAGIC = b"MLKGPRM1"


@dataclass(frozen=True)
class ModelConfig:
    raw_dim: int = 512
    dim: int = 128
    layers: int = 2
    use_query_attention: bool = True

    def __post_init__(self):
        if self.raw_dim < 1 or self.dim < 2 or self.layers < 0:
            raise ValueError(f"invalid model config {self}")


_INTRA_LEVELS = (Level.ENTITY, Level.CHUNK)


def _intra_names(n: int) -> list[tuple[str, tuple, str]]:
    return [
        ("wq_sem", (n, n), "xavier"),
        ("wk_sem", (n, n), "xavier"),
        ("wq_qry", (n, n), "xavier"),
        ("wk_qry", (2 * n, n), "xavier"),
        ("w_val", (n, n), "xavier"),
        ("mlp_w1", (n, n), "xavier"),
        ("mlp_b1", (n,), "zeros"),
        ("mlp_w2", (n, n), "xavier"),
        ("mlp_b2", (n,), "zeros"),
        ("ln_gain", (n,), "ones"),
        ("ln_bias", (n,), "zeros"),
    ]


def _inter_names(n: int, source_levels: tuple[str, ...]) -> list[tuple[str, tuple, str]]:
    names = [("w_tgt", (n, n), "xavier")]
    names += [(f"w_src_{src}", (n, n), "xavier") for src in source_levels]
    names += [
        ("wq_qry", (n, n), "xavier"),
        ("wk_qry", (2 * n, n), "xavier"),
        ("w_val", (n, n), "xavier"),
        ("mlp_w1", (n, n), "xavier"),
        ("mlp_b1", (n,), "zeros"),
        ("mlp_w2", (n, n), "xavier"),
        ("mlp_b2", (n,), "zeros"),
        ("ln_gain", (n,), "ones"),
        ("ln_bias", (n,), "zeros"),
    ]
    return names


def _full_spec(config: ModelConfig) -> list[tuple[str, tuple, str]]:
    spec = [("w_in", (config.raw_dim, config.dim), "xavier")]
    n = config.dim
    for layer in range(config.layers):
        for level in ("entity", "chunk"):
            spec += [
                (f"l{layer}.intra_{level}.{name}", shape, kind)
                for name, shape, kind in _intra_names(n)
            ]
        spec += [
            (f"l{layer}.inter_chunk.{name}", shape, kind)
            for name, shape, kind in _inter_names(n, ("entity",))
        ]
        spec += [
            (f"l{layer}.inter_document.{name}", shape, kind)
            for name, shape, kind in _inter_names(n, ("entity", "chunk"))
        ]
    return spec


def parameter_spec(config: ModelConfig) -> list[tuple[str, tuple]]:
    """Ordered (name, shape) list; initialization and checkpoints follow
    this order exactly."""
    return [(name, shape) for name, shape, _ in _full_spec(config)]


@dataclass
class QsgnnParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "QsgnnParams":
        return QsgnnParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def as_leaves(self, trainable: bool = True) -> dict[str, Tensor]:
        make = ad.parameter if trainable else ad.constant
        return {name: make(arr) for name, arr in self.tensors.items()}

    def n_parameters(self) -> int:
        return sum(arr.size for arr in self.tensors.values())

    def with_query_attention(self, enabled: bool) -> "QsgnnParams":
        return QsgnnParams(replace(self.config, use_query_attention=enabled), self.tensors)


def init_params(config: ModelConfig, rng: np.random.Generator) -> QsgnnParams:
    """Xavier-uniform matrices, unit norm gains, zero biases. Draw order
    follows parameter_spec so a fixed seed fixes every tensor."""
    tensors: dict[str, np.ndarray] = {}
    for name, shape, kind in _full_spec(config):
        if kind == "xavier":
            fan_in, fan_out = shape[0], shape[1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-limit, limit, size=shape).astype(np.float64)
        elif kind == "ones":
            tensors[name] = np.ones(shape, dtype=np.float64)
        else:
            tensors[name] = np.zeros(shape, dtype=np.float64)
    return QsgnnParams(config, tensors)


def save_params(params: QsgnnParams, path: str | Path) -> None:
    """Versioned binary checkpoint: magic, JSON shape manifest, then raw
    little-endian float64 blocks in manifest order."""
    header = {
        "format": "mlkg-checkpoint",
        "version": 1,
        "config": {
            "raw_dim": params.config.raw_dim,
            "dim": params.config.dim,
            "layers": params.config.layers,
            "use_query_attention": params.config.use_query_attention,
        },
        "tensors": [[name, list(arr.shape)] for name, arr in params.tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(len(blob).to_bytes(8, "little"))
        handle.write(blob)
        for arr in params.tensors.values():
            handle.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path: str | Path) -> QsgnnParams:
    with open(path, "rb") as handle:
        magic = handle.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        header_len = int.from_bytes(handle.read(8), "little")
        header = json.loads(handle.read(header_len).decode("utf-8"))
        if header.get("format") != "mlkg-checkpoint" or header.get("version") != 1:
            raise ValueError(f"{path}: unsupported checkpoint version")
        config = ModelConfig(**header["config"])
        expected = parameter_spec(config)
        listed = [(name, tuple(shape)) for name, shape in header["tensors"]]
        if listed != expected:
            raise ValueError(f"{path}: tensor manifest does not match configuration")
        tensors: dict[str, np.ndarray] = {}
        for name, shape in listed:
            count = int(np.prod(shape)) if shape else 1
            buf = handle.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
        if handle.read(1):
            raise ValueError(f"{path}: trailing bytes after last tensor")
    return QsgnnParams(config, tensors)


# ---------------------------------------------------------------------------
# Graph plans: CSR edge layouts consumed by the attention blocks.


@dataclass(frozen=True)
class SegmentPlan:
    """Edges grouped by target node. Per target the order is the self
    edge first, then remaining sources ascending (for inter plans:
    entities before chunks, each ascending). src indexes the block's
    source row space; for inter blocks that space is the concatenation
    [targets; entities; chunks] in that order."""

    offsets: np.ndarray
    src: np.ndarray
    dst: np.ndarray


def _segment_plan(neighbor_lists: list[list[int]]) -> SegmentPlan:
    lengths = [len(lst) for lst in neighbor_lists]
    offsets = np.zeros(len(neighbor_lists) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    src = np.asarray([j for lst in neighbor_lists for j in lst], dtype=np.int64)
    dst = np.repeat(np.arange(len(neighbor_lists), dtype=np.int64), lengths)
    return SegmentPlan(offsets, src, dst)


@dataclass(frozen=True)
class GraphPlan:
    entity_intra: SegmentPlan
    chunk_intra: SegmentPlan
    chunk_inter: SegmentPlan
    doc_inter: SegmentPlan


def build_plan(g: MultiLKG) -> GraphPlan:
    adj = g._adjacency
    ne, nc, nd = g.n_entities, g.n_chunks, g.n_documents

    oo = adj[EdgeKind.OO][Level.ENTITY]
    entity_intra = _segment_plan([[i, *oo[i]] for i in range(ne)])

    cc = adj[EdgeKind.CC][Level.CHUNK]
    chunk_intra = _segment_plan([[i, *cc[i]] for i in range(nc)])

    oc = adj[EdgeKind.OC][Level.CHUNK]
    chunk_inter = _segment_plan(
        [[i, *(nc + j for j in oc[i])] for i in range(nc)]
    )

    od = adj[EdgeKind.OD][Level.DOCUMENT]
    cd = adj[EdgeKind.CD][Level.DOCUMENT]
    doc_inter = _segment_plan(
        [
            [i, *(nd + j for j in od[i]), *(nd + ne + j for j in cd[i])]
            for i in range(nd)
        ]
    )
    return GraphPlan(entity_intra, chunk_intra, chunk_inter, doc_inter)


# ---------------------------------------------------------------------------
# Blocks


def _mlp(leaves: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    hidden = ad.relu(ad.add(ad.matmul(x, leaves[f"{prefix}mlp_w1"]), leaves[f"{prefix}mlp_b1"]))
    return ad.add(ad.matmul(hidden, leaves[f"{prefix}mlp_w2"]), leaves[f"{prefix}mlp_b2"])


def _residual_update(leaves, prefix: str, h: Tensor, msg: Tensor) -> Tensor:
    normed = ad.layernorm_rows(
        ad.add(h, msg), leaves[f"{prefix}ln_gain"], leaves[f"{prefix}ln_bias"], LN_EPS
    )
    return _mlp(leaves, prefix, normed)


def _check_finite(name: str, out: Tensor) -> Tensor:
    bad = ~np.isfinite(out.data)
    if bad.any():
        node = int(np.argwhere(bad)[0][0])
        raise FloatingPointError(f"non-finite state in {name} at node {node}")
    return out


def _intra_block_t(
    leaves: dict[str, Tensor],
    prefix: str,
    use_query: bool,
    q: Tensor,
    h: Tensor,
    plan: SegmentPlan,
    record: list | None,
) -> Tensor:
    if h.data.shape[0] == 0:
        return h
    queries = ad.gather_rows(ad.matmul(h, leaves[f"{prefix}wq_sem"]), plan.dst)
    keys = ad.gather_rows(ad.matmul(h, leaves[f"{prefix}wk_sem"]), plan.src)
    logits = ad.rows_cosine(queries, keys)
    if use_query:
        pair = ad.concat_cols(ad.gather_rows(h, plan.dst), ad.gather_rows(h, plan.src))
        left = ad.broadcast_rows(ad.matmul(q, leaves[f"{prefix}wq_qry"]), pair.data.shape[0])
        align = ad.rows_cosine(left, ad.matmul(pair, leaves[f"{prefix}wk_qry"]))
        logits = ad.add(logits, align)
    attn = ad.segment_softmax(logits, plan.offsets)
    if record is not None:
        record.append((prefix.rstrip("."), attn.data.copy(), plan.offsets.copy()))
    values = ad.gather_rows(ad.matmul(h, leaves[f"{prefix}w_val"]), plan.src)
    msg = ad.segment_weighted_sum(attn, values, plan.offsets)
    return _check_finite(prefix.rstrip("."), _residual_update(leaves, prefix, h, msg))


def _inter_block_t(
    leaves: dict[str, Tensor],
    prefix: str,
    use_query: bool,
    q: Tensor,
    target: Tensor,
    sources: list[tuple[str, Tensor]],
    plan: SegmentPlan,
    record: list | None,
) -> Tensor:
    if target.data.shape[0] == 0:
        return target
    projected = [ad.matmul(target, leaves[f"{prefix}w_tgt"])]
    projected += [ad.matmul(h, leaves[f"{prefix}w_src_{name}"]) for name, h in sources]
    key_rows = ad.gather_rows(ad.concat_rows(projected), plan.src)
    tgt_rows = ad.gather_rows(projected[0], plan.dst)
    pair = ad.concat_cols(tgt_rows, key_rows)
    if use_query:
        left = ad.broadcast_rows(ad.matmul(q, leaves[f"{prefix}wq_qry"]), pair.data.shape[0])
        logits = ad.rows_cosine(left, ad.matmul(pair, leaves[f"{prefix}wk_qry"]))
    else:
        logits = ad.constant(np.zeros(pair.data.shape[0], dtype=np.float64))
    attn = ad.segment_softmax(logits, plan.offsets)
    if record is not None:
        record.append((prefix.rstrip("."), attn.data.copy(), plan.offsets.copy()))
    states = ad.concat_rows([target] + [h for _, h in sources])
    values = ad.gather_rows(ad.matmul(states, leaves[f"{prefix}w_val"]), plan.src)
    msg = ad.segment_weighted_sum(attn, values, plan.offsets)
    return _check_finite(prefix.rstrip("."), _residual_update(leaves, prefix, target, msg))


@dataclass
class ForwardResult:
    states: dict[Level, Tensor]
    query: Tensor
    attention: list | None = field(default=None)

    def matrices(self) -> dict[Level, np.ndarray]:
        return {level: t.data for level, t in self.states.items()}


def project_inputs(
    params: QsgnnParams, raw: dict[Level, np.ndarray], raw_query: np.ndarray
) -> tuple[dict[Level, np.ndarray], np.ndarray]:
    """Bottleneck projection of raw per-level matrices and the query."""
    w_in = params.tensors["w_in"]
    if raw_query.shape[-1] != w_in.shape[0]:
        raise ValueError(
            f"raw dimension {raw_query.shape[-1]} does not match w_in {w_in.shape}"
        )
    states = {level: mat @ w_in for level, mat in raw.items()}
    return states, np.atleast_2d(raw_query) @ w_in


def forward_t(
    leaves: dict[str, Tensor],
    config: ModelConfig,
    plan: GraphPlan,
    raw: dict[Level, np.ndarray],
    raw_query: np.ndarray,
    record_attention: list | None = None,
) -> ForwardResult:
    """Tape-building forward pass; gradients flow into `leaves`."""
    w_in = leaves["w_in"]
    states = {level: ad.matmul(ad.constant(raw[level]), w_in) for level in Level}
    q = ad.matmul(ad.constant(np.atleast_2d(raw_query)), w_in)
    use_query = config.use_query_attention
    for layer in range(config.layers):
        states[Level.ENTITY] = _intra_block_t(
            leaves, f"l{layer}.intra_entity.", use_query, q,
            states[Level.ENTITY], plan.entity_intra, record_attention,
        )
        states[Level.CHUNK] = _intra_block_t(
            leaves, f"l{layer}.intra_chunk.", use_query, q,
            states[Level.CHUNK], plan.chunk_intra, record_attention,
        )
        states[Level.CHUNK] = _inter_block_t(
            leaves, f"l{layer}.inter_chunk.", use_query, q,
            states[Level.CHUNK], [("entity", states[Level.ENTITY])],
            plan.chunk_inter, record_attention,
        )
        states[Level.DOCUMENT] = _inter_block_t(
            leaves, f"l{layer}.inter_document.", use_query, q,
            states[Level.DOCUMENT],
            [("entity", states[Level.ENTITY]), ("chunk", states[Level.CHUNK])],
            plan.doc_inter, record_attention,
        )
    return ForwardResult(states, q, record_attention)


def forward(
    params: QsgnnParams,
    g: MultiLKG,
    raw: dict[Level, np.ndarray],
    raw_query: np.ndarray,
    plan: GraphPlan | None = None,
    record_attention: list | None = None,
) -> ForwardResult:
    """Evaluation-only forward pass (no gradient tape)."""
    plan = plan if plan is not None else build_plan(g)
    with ad.no_grad():
        return forward_t(
            params.as_leaves(trainable=False),
            params.config,
            plan,
            raw,
            raw_query,
            record_attention,
        )


def intra_block(
    params: QsgnnParams,
    layer: int,
    level: Level,
    q: np.ndarray,
    h: np.ndarray,
    plan: SegmentPlan,
) -> np.ndarray:
    """Single intra-level update of one level matrix (evaluation only)."""
    if level not in _INTRA_LEVELS:
        raise ValueError(f"intra blocks update entities or chunks, not {level}")
    prefix = f"l{layer}.intra_{level.value}."
    with ad.no_grad():
        out = _intra_block_t(
            params.as_leaves(trainable=False),
            prefix,
            params.config.use_query_attention,
            ad.constant(np.atleast_2d(q)),
            ad.constant(h),
            plan,
            None,
        )
    return out.data


def inter_block(
    params: QsgnnParams,
    layer: int,
    target_level: Level,
    q: np.ndarray,
    states: dict[Level, np.ndarray],
    plan: SegmentPlan,
) -> np.ndarray:
    """Single inter-level update of the target level (evaluation only)."""
    if target_level is Level.CHUNK:
        prefix = f"l{layer}.inter_chunk."
        sources = [("entity", ad.constant(states[Level.ENTITY]))]
    elif target_level is Level.DOCUMENT:
        prefix = f"l{layer}.inter_document."
        sources = [
            ("entity", ad.constant(states[Level.ENTITY])),
            ("chunk", ad.constant(states[Level.CHUNK])),
        ]
    else:
        raise ValueError("inter blocks update chunks or documents")
    with ad.no_grad():
        out = _inter_block_t(
            params.as_leaves(trainable=False),
            prefix,
            params.config.use_query_attention,
            ad.constant(np.atleast_2d(q)),
            ad.constant(states[target_level]),
            sources,
            plan,
            None,
        )
    return out.data
