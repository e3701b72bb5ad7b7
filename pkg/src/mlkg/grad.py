"""Batch loss gradients, the Adam optimizer, and a finite-difference check.

The numeric batch item is (raw query vector, positive document indices,
negative document indices); resolution from document ids and query text
happens in the training module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Level
from .model import (
    GraphPlan,
    QsgnnParams,
    forward_t,
    inter_block,
    intra_block,
    project_inputs,
)


@dataclass(frozen=True)
class BatchItem:
    query_raw: np.ndarray
    positives: tuple[int, ...]
    negatives: tuple[int, ...]


def _build_loss(
    leaves: dict[str, Tensor],
    params: QsgnnParams,
    plan: GraphPlan,
    raw: dict[Level, np.ndarray],
    items: list[BatchItem],
    tau: float,
) -> Tensor:
    losses: list[Tensor] = []
    for item in items:
        result = forward_t(leaves, params.config, plan, raw, item.query_raw)
        docs = result.states[Level.DOCUMENT]
        for positive in item.positives:
            indices = np.asarray((positive, *item.negatives), dtype=np.int64)
            selected = ad.gather_rows(docs, indices)
            scores = ad.rows_cosine(ad.broadcast_rows(result.query, len(indices)), selected)
            losses.append(ad.nt_xent(scores, tau))
    return ad.mean_scalars(losses)


def batch_loss(
    params: QsgnnParams,
    plan: GraphPlan,
    raw: dict[Level, np.ndarray],
    items: list[BatchItem],
    tau: float,
) -> float:
    """Loss only, no tape; used by the finite-difference oracle."""
    with ad.no_grad():
        loss = _build_loss(params.as_leaves(trainable=False), params, plan, raw, items, tau)
    return float(loss.data)


def backward_batch(
    params: QsgnnParams,
    plan: GraphPlan,
    raw: dict[Level, np.ndarray],
    items: list[BatchItem],
    tau: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean NT-Xent loss over all (query, support) pairs in the batch and
    its exact gradient for every parameter tensor.

    Parameters the loss does not reach get exact-zero gradients. Any
    non-finite loss or gradient aborts, naming the offending tensor.
    """
    if not items:
        raise ValueError("empty batch")
    leaves = params.as_leaves(trainable=True)
    loss = _build_loss(leaves, params, plan, raw, items, tau)
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    for name, leaf in leaves.items():
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for tensor {name!r}")
        grads[name] = g
    return float(loss.data), grads


def fd_conditioned(
    params: QsgnnParams,
    plan: GraphPlan,
    raw: dict[Level, np.ndarray],
    items: list[BatchItem],
    threshold: float = 1e-9,
) -> bool:
    """Whether finite differencing is valid at this parameter point.

    A state row that leaves any block exactly zero (an all-saturated relu
    hidden layer with zero-initialised biases collapses the update to
    b2 = 0) puts the next attention block on the cosine zero-guard: the
    guard clamps that cosine and its gradient to 0, but an arbitrarily
    small nudge of the bias resurrects the row and the scale-invariant
    cosine jumps by O(1), so the loss is discontinuous there and central
    differences diverge. The probe replays the forward pass block by
    block — zero rows can appear mid-layer and be resurrected by the next
    block, so end-of-layer states are not enough — and flags any state or
    query row below the threshold at any stage.
    """

    def healthy(matrix: np.ndarray) -> bool:
        if matrix.size == 0:
            return True
        return float(np.linalg.norm(matrix, axis=1).min()) >= threshold

    for item in items:
        states, q = project_inputs(params, raw, item.query_raw)
        if not all(healthy(m) for m in (*states.values(), q)):
            return False
        for layer in range(params.config.layers):
            states[Level.ENTITY] = intra_block(
                params, layer, Level.ENTITY, q, states[Level.ENTITY], plan.entity_intra
            )
            if not healthy(states[Level.ENTITY]):
                return False
            states[Level.CHUNK] = intra_block(
                params, layer, Level.CHUNK, q, states[Level.CHUNK], plan.chunk_intra
            )
            if not healthy(states[Level.CHUNK]):
                return False
            states[Level.CHUNK] = inter_block(
                params, layer, Level.CHUNK, q, states, plan.chunk_inter
            )
            if not healthy(states[Level.CHUNK]):
                return False
            states[Level.DOCUMENT] = inter_block(
                params, layer, Level.DOCUMENT, q, states, plan.doc_inter
            )
            if not healthy(states[Level.DOCUMENT]):
                return False
    return True


def fd_check(
    params: QsgnnParams,
    plan: GraphPlan,
    raw: dict[Level, np.ndarray],
    items: list[BatchItem],
    tau: float = 1.0,
    eps: float = 1e-4,
    samples_per_tensor: int = 20,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic gradients and central finite
    differences over sampled parameter coordinates.

    Zero-guard: an exactly-zero analytic gradient with |fd| < 1e-8
    counts as error 0, as does any coordinate where both estimates are
    below 1e-8 (finite differencing is pure noise there).
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    _, grads = backward_batch(params, plan, raw, items, tau)
    worst = 0.0
    for name, arr in params.tensors.items():
        flat = arr.reshape(-1)
        count = min(samples_per_tensor, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        grad_flat = grads[name].reshape(-1)
        for coord in coords:
            original = flat[coord]
            flat[coord] = original + eps
            loss_plus = batch_loss(params, plan, raw, items, tau)
            flat[coord] = original - eps
            loss_minus = batch_loss(params, plan, raw, items, tau)
            flat[coord] = original
            fd = (loss_plus - loss_minus) / (2.0 * eps)
            analytic = grad_flat[coord]
            if analytic == 0.0 and abs(fd) < 1e-8:
                continue
            denom = max(abs(fd), abs(analytic))
            if denom < 1e-8:
                continue
            worst = max(worst, abs(fd - analytic) / denom)
    return worst


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(params: QsgnnParams, lr: float) -> AdamState:
    state = AdamState(lr=lr)
    for name, arr in params.tensors.items():
        state.m[name] = np.zeros_like(arr)
        state.v[name] = np.zeros_like(arr)
    return state


def adam_step(
    state: AdamState, params: QsgnnParams, grads: dict[str, np.ndarray]
) -> tuple[QsgnnParams, AdamState]:
    """One Adam update with bias correction, applied in place."""
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for name, arr in params.tensors.items():
        g = grads[name]
        if g.shape != arr.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name!r} {arr.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (state.lr / correction1) * m / (np.sqrt(v / correction2) + state.eps)
        if not np.all(np.isfinite(update)):
            raise FloatingPointError(f"non-finite optimizer update for {name!r}")
        arr -= update
    return params, state
