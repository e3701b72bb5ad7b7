"""Segment reductions behind attention message passing.

Two interchangeable backends compute the same results: a compiled
Cython extension (mlkg._ckernels) and a pure numpy fallback. The
extension is picked at import when present; set MLKG_KERNELS=python or
MLKG_KERNELS=cython to force a backend.

Segments are CSR-style: offsets has length S+1 and segment s covers
items offsets[s]..offsets[s+1]-1. All segments must be non-empty (the
model guarantees this via mandatory self-loops).
"""

from __future__ import annotations

import os

import numpy as np


def _check_offsets(offsets: np.ndarray, n_items: int) -> None:
    if offsets.ndim != 1 or offsets.size == 0:
        raise ValueError("offsets must be a non-empty 1-D array")
    if offsets[0] != 0 or offsets[-1] != n_items:
        raise ValueError(f"offsets must run from 0 to {n_items}")
    if np.any(np.diff(offsets) <= 0):
        raise ValueError("empty segment: offsets must be strictly increasing")


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int64)


# ---------------------------------------------------------------------------
# numpy backend


def py_segment_softmax(logits, offsets):
    """Softmax within each segment; returns weights, same shape as logits."""
    logits, offsets = _f64(logits), _i64(offsets)
    if logits.size == 0:
        return logits.copy()
    _check_offsets(offsets, logits.size)
    starts = offsets[:-1]
    lengths = np.diff(offsets)
    shifted = np.exp(logits - np.repeat(np.maximum.reduceat(logits, starts), lengths))
    sums = np.add.reduceat(shifted, starts)
    return shifted / np.repeat(sums, lengths)


def py_segment_softmax_grad(weights, grad_weights, offsets):
    """Backprop through segment_softmax: dL/dlogits from dL/dweights."""
    weights, grad_weights, offsets = _f64(weights), _f64(grad_weights), _i64(offsets)
    if weights.size == 0:
        return weights.copy()
    _check_offsets(offsets, weights.size)
    starts = offsets[:-1]
    lengths = np.diff(offsets)
    inner = np.add.reduceat(weights * grad_weights, starts)
    return weights * (grad_weights - np.repeat(inner, lengths))


def py_segment_weighted_sum(weights, values, offsets):
    """out[s] = sum over segment s of weights[e] * values[e, :]."""
    weights, values, offsets = _f64(weights), _f64(values), _i64(offsets)
    n_seg = offsets.size - 1
    if weights.size == 0:
        return np.zeros((n_seg, values.shape[1]), dtype=np.float64)
    _check_offsets(offsets, weights.size)
    return np.add.reduceat(weights[:, None] * values, offsets[:-1], axis=0)


def py_segment_weighted_sum_grad(weights, values, offsets, grad_out):
    """Backprop through segment_weighted_sum: (dL/dweights, dL/dvalues)."""
    weights, values, offsets = _f64(weights), _f64(values), _i64(offsets)
    grad_out = _f64(grad_out)
    if weights.size == 0:
        return weights.copy(), values.copy()
    _check_offsets(offsets, weights.size)
    expanded = np.repeat(grad_out, np.diff(offsets), axis=0)
    grad_weights = np.einsum("ek,ek->e", expanded, values)
    grad_values = weights[:, None] * expanded
    return grad_weights, grad_values


def py_scatter_add_rows(src, indices, n_rows):
    """out[indices[e], :] += src[e, :] over an (n_rows, n) zero matrix."""
    src, indices = _f64(src), _i64(indices)
    out = np.zeros((n_rows, src.shape[1]), dtype=np.float64)
    if src.size:
        np.add.at(out, indices, src)
    return out


_PY_IMPLS = {
    "segment_softmax": py_segment_softmax,
    "segment_softmax_grad": py_segment_softmax_grad,
    "segment_weighted_sum": py_segment_weighted_sum,
    "segment_weighted_sum_grad": py_segment_weighted_sum_grad,
    "scatter_add_rows": py_scatter_add_rows,
}


# ---------------------------------------------------------------------------
# Cython backend (thin wrappers allocating outputs)

_FORCED = os.environ.get("MLKG_KERNELS", "").strip().lower()
if _FORCED not in ("", "python", "cython"):
    raise ImportError(f"MLKG_KERNELS must be 'python' or 'cython', got {_FORCED!r}")

try:
    from . import _ckernels as _C
except ImportError:
    _C = None

if _FORCED == "cython" and _C is None:
    raise ImportError("MLKG_KERNELS=cython but the compiled extension is not available")


def _make_cython_impls(ext):
    def cy_segment_softmax(logits, offsets):
        logits, offsets = _f64(logits), _i64(offsets)
        if logits.size == 0:
            return logits.copy()
        _check_offsets(offsets, logits.size)
        out = np.empty_like(logits)
        ext.segment_softmax(logits, offsets, out)
        return out

    def cy_segment_softmax_grad(weights, grad_weights, offsets):
        weights, grad_weights, offsets = _f64(weights), _f64(grad_weights), _i64(offsets)
        if weights.size == 0:
            return weights.copy()
        _check_offsets(offsets, weights.size)
        out = np.empty_like(weights)
        ext.segment_softmax_grad(weights, grad_weights, offsets, out)
        return out

    def cy_segment_weighted_sum(weights, values, offsets):
        weights, values, offsets = _f64(weights), _f64(values), _i64(offsets)
        n_seg = offsets.size - 1
        out = np.zeros((n_seg, values.shape[1]), dtype=np.float64)
        if weights.size == 0:
            return out
        _check_offsets(offsets, weights.size)
        ext.segment_weighted_sum(weights, values, offsets, out)
        return out

    def cy_segment_weighted_sum_grad(weights, values, offsets, grad_out):
        weights, values, offsets = _f64(weights), _f64(values), _i64(offsets)
        grad_out = _f64(grad_out)
        if weights.size == 0:
            return weights.copy(), values.copy()
        _check_offsets(offsets, weights.size)
        grad_weights = np.empty_like(weights)
        grad_values = np.empty_like(values)
        ext.segment_weighted_sum_grad(weights, values, offsets, grad_out, grad_weights, grad_values)
        return grad_weights, grad_values

    def cy_scatter_add_rows(src, indices, n_rows):
        src, indices = _f64(src), _i64(indices)
        out = np.zeros((n_rows, src.shape[1]), dtype=np.float64)
        if src.size:
            ext.scatter_add_rows(src, indices, out)
        return out

    return {
        "segment_softmax": cy_segment_softmax,
        "segment_softmax_grad": cy_segment_softmax_grad,
        "segment_weighted_sum": cy_segment_weighted_sum,
        "segment_weighted_sum_grad": cy_segment_weighted_sum_grad,
        "scatter_add_rows": cy_scatter_add_rows,
    }


_CY_IMPLS = _make_cython_impls(_C) if _C is not None else None

if _FORCED == "python" or _CY_IMPLS is None:
    BACKEND = "python"
    _ACTIVE = _PY_IMPLS
else:
    BACKEND = "cython"
    _ACTIVE = _CY_IMPLS

segment_softmax = _ACTIVE["segment_softmax"]
segment_softmax_grad = _ACTIVE["segment_softmax_grad"]
segment_weighted_sum = _ACTIVE["segment_weighted_sum"]
segment_weighted_sum_grad = _ACTIVE["segment_weighted_sum_grad"]
scatter_add_rows = _ACTIVE["scatter_add_rows"]


def available_backends() -> dict[str, dict]:
    """Backend name -> implementation table, for benchmarks and tests."""
    table = {"python": _PY_IMPLS}
    if _CY_IMPLS is not None:
        table["cython"] = _CY_IMPLS
    return table
