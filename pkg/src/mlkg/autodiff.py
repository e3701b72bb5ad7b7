"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small tape: each op produces a Tensor holding its value, its parent
tensors, and a closure that routes the output gradient to the parents.
Reductions run in fixed index order so repeated backward passes are
bitwise identical. The op set is exactly what the attention blocks and
the contrastive loss need.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import kernels

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape construction inside the block (pure evaluation)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.ndim != 0:
            raise ValueError("backward requires a scalar root")
        if not np.isfinite(self.data):
            raise FloatingPointError("backward on non-finite loss")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _node(a.data + b.data, (a, b), backward_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    def backward_fn(g):
        _accumulate(a, g * factor)

    return _node(a.data * factor, (a,), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def backward_fn(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward_fn)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def backward_fn(g):
        _accumulate(a, g * mask)

    return _node(a.data * mask, (a,), backward_fn)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    split = a.data.shape[1]

    def backward_fn(g):
        _accumulate(a, g[:, :split])
        _accumulate(b, g[:, split:])

    return _node(np.concatenate([a.data, b.data], axis=1), (a, b), backward_fn)


def concat_rows(parts: list[Tensor]) -> Tensor:
    sizes = [p.data.shape[0] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward_fn(g):
        for part, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            _accumulate(part, g[lo:hi])

    return _node(np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward_fn)


def gather_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    indices = np.ascontiguousarray(indices, dtype=np.int64)

    def backward_fn(g):
        _accumulate(a, kernels.scatter_add_rows(g, indices, a.data.shape[0]))

    return _node(a.data[indices], (a,), backward_fn)


def broadcast_rows(v: Tensor, n_rows: int) -> Tensor:
    """Tile a (1, n) row vector to (n_rows, n)."""

    def backward_fn(g):
        _accumulate(v, g.sum(axis=0, keepdims=True))

    return _node(np.repeat(v.data, n_rows, axis=0), (v,), backward_fn)


_COS_GUARD = 1e-12


def rows_cosine(a: Tensor, b: Tensor) -> Tensor:
    """Per-row cosine of two equal-shape matrices; rows where either
    operand has norm < 1e-12 yield 0 with zero gradient."""
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    valid = (na >= _COS_GUARD) & (nb >= _COS_GUARD)
    denom = np.where(valid, na * nb, 1.0)
    dots = np.einsum("ij,ij->i", a.data, b.data)
    cos = np.where(valid, dots / denom, 0.0)

    def backward_fn(g):
        ge = np.where(valid, g, 0.0)[:, None]
        inv = (1.0 / denom)[:, None]
        cos_col = cos[:, None]
        na2 = np.where(valid, na, 1.0)[:, None] ** 2
        nb2 = np.where(valid, nb, 1.0)[:, None] ** 2
        _accumulate(a, ge * (b.data * inv - cos_col * a.data / na2))
        _accumulate(b, ge * (a.data * inv - cos_col * b.data / nb2))

    return _node(cos, (a, b), backward_fn)


def segment_softmax(logits: Tensor, offsets: np.ndarray) -> Tensor:
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    weights = kernels.segment_softmax(logits.data, offsets)

    def backward_fn(g):
        _accumulate(logits, kernels.segment_softmax_grad(weights, g, offsets))

    return _node(weights, (logits,), backward_fn)


def segment_weighted_sum(weights: Tensor, values: Tensor, offsets: np.ndarray) -> Tensor:
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)

    def backward_fn(g):
        grad_w, grad_v = kernels.segment_weighted_sum_grad(
            weights.data, values.data, offsets, g
        )
        _accumulate(weights, grad_w)
        _accumulate(values, grad_v)

    return _node(
        kernels.segment_weighted_sum(weights.data, values.data, offsets),
        (weights, values),
        backward_fn,
    )


def layernorm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization with learnable gain and bias."""
    n = x.data.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward_fn(g):
        _accumulate(bias, g.sum(axis=0))
        _accumulate(gain, (g * xhat).sum(axis=0))
        dxhat = g * gain.data
        term = dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * np.mean(
            dxhat * xhat, axis=1, keepdims=True
        )
        _accumulate(x, inv_std * term)

    if n == 0:
        raise ValueError("layernorm over zero features")
    return _node(out, (x, gain, bias), backward_fn)


def nt_xent(scores: Tensor, tau: float) -> Tensor:
    """Contrastive cross-entropy over a 1-D score vector whose first
    entry is the positive; remaining entries are negatives."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if scores.data.ndim != 1 or scores.data.size < 2:
        raise ValueError("scores must be 1-D with at least one negative")
    z = scores.data / tau
    m = z.max()
    log_norm = m + np.log(np.sum(np.exp(z - m)))
    loss = log_norm - z[0]
    probs = np.exp(z - log_norm)

    def backward_fn(g):
        grad = probs / tau
        grad = grad.copy()
        grad[0] -= 1.0 / tau
        _accumulate(scores, g * grad)

    return _node(loss, (scores,), backward_fn)


def sum_all(a: Tensor) -> Tensor:
    """Sum of every entry as a 0-d tensor."""

    def backward_fn(g):
        _accumulate(a, np.full_like(a.data, float(g)))

    return _node(np.asarray(a.data.sum()), (a,), backward_fn)


def mean_scalars(losses: list[Tensor]) -> Tensor:
    """Mean of 0-d tensors, summed in list order."""
    if not losses:
        raise ValueError("mean of no losses")
    total = losses[0]
    for item in losses[1:]:
        total = add(total, item)
    return scale(total, 1.0 / len(losses))
