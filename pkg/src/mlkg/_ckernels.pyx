# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled segment reductions; mirrors the numpy backend in kernels.py.

Loops accumulate in ascending index order so results are deterministic
and match the numpy reduceat-based fallback.
"""

from libc.math cimport exp
from libc.stdint cimport int64_t


def segment_softmax(const double[::1] logits,
                    const int64_t[::1] offsets,
                    double[::1] out):
    cdef Py_ssize_t s, e, n_seg = offsets.shape[0] - 1
    cdef double m, z
    for s in range(n_seg):
        m = logits[offsets[s]]
        for e in range(offsets[s] + 1, offsets[s + 1]):
            if logits[e] > m:
                m = logits[e]
        z = 0.0
        for e in range(offsets[s], offsets[s + 1]):
            out[e] = exp(logits[e] - m)
            z += out[e]
        for e in range(offsets[s], offsets[s + 1]):
            out[e] /= z


def segment_softmax_grad(const double[::1] weights,
                         const double[::1] grad_weights,
                         const int64_t[::1] offsets,
                         double[::1] out):
    cdef Py_ssize_t s, e, n_seg = offsets.shape[0] - 1
    cdef double inner
    for s in range(n_seg):
        inner = 0.0
        for e in range(offsets[s], offsets[s + 1]):
            inner += weights[e] * grad_weights[e]
        for e in range(offsets[s], offsets[s + 1]):
            out[e] = weights[e] * (grad_weights[e] - inner)


def segment_weighted_sum(const double[::1] weights,
                         const double[:, ::1] values,
                         const int64_t[::1] offsets,
                         double[:, ::1] out):
    cdef Py_ssize_t s, e, k, n_seg = offsets.shape[0] - 1, n = values.shape[1]
    cdef double w
    for s in range(n_seg):
        for e in range(offsets[s], offsets[s + 1]):
            w = weights[e]
            for k in range(n):
                out[s, k] += w * values[e, k]


def segment_weighted_sum_grad(const double[::1] weights,
                              const double[:, ::1] values,
                              const int64_t[::1] offsets,
                              const double[:, ::1] grad_out,
                              double[::1] grad_weights,
                              double[:, ::1] grad_values):
    cdef Py_ssize_t s, e, k, n_seg = offsets.shape[0] - 1, n = values.shape[1]
    cdef double acc, w
    for s in range(n_seg):
        for e in range(offsets[s], offsets[s + 1]):
            acc = 0.0
            w = weights[e]
            for k in range(n):
                acc += grad_out[s, k] * values[e, k]
                grad_values[e, k] = w * grad_out[s, k]
            grad_weights[e] = acc


def scatter_add_rows(const double[:, ::1] src,
                     const int64_t[::1] indices,
                     double[:, ::1] out):
    cdef Py_ssize_t e, k, n_src = src.shape[0], n = src.shape[1]
    cdef Py_ssize_t row
    for e in range(n_src):
        row = indices[e]
        for k in range(n):
            out[row, k] += src[e, k]
