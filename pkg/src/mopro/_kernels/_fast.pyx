# cython: language_level=3
"""Compiled implementation of the kernel API.

Fuses the elementwise/rowwise loops that cost NumPy several temporaries
per call (softmax, cross-entropy, row normalization, EMA updates).  The
dense products delegate to NumPy's BLAS, which is already optimal for
these sizes; they are re-exported so both backends expose one surface.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

name = "cython"


# ---- dense products: BLAS via NumPy in both backends ----

def matmul_fwd(a, b):
    return np.matmul(a, b)


def matmul_bwd_a(gc, b):
    return np.matmul(gc, b.T)


def matmul_bwd_b(a, gc):
    return np.matmul(a.T, gc)


# ---- elementwise / rowwise ops ----

def relu_fwd(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(d):
                out[i, j] = x[i, j] if x[i, j] > 0.0 else 0.0
    return out_arr


def relu_bwd(double[:, ::1] y, double[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(d):
                out[i, j] = gy[i, j] if y[i, j] > 0.0 else 0.0
    return out_arr


def l2norm_fwd(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float64)
    inv_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] inv = inv_arr
    cdef double s
    with nogil:
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += x[i, j] * x[i, j]
            s = sqrt(s)
            inv[i] = 1.0 / s if s > 0.0 else 0.0
            for j in range(d):
                out[i, j] = x[i, j] * inv[i]
    return out_arr, inv_arr


def l2norm_bwd(double[:, ::1] y, double[::1] inv, double[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(d):
                dot += gy[i, j] * y[i, j]
            for j in range(d):
                out[i, j] = (gy[i, j] - y[i, j] * dot) * inv[i]
    return out_arr


def softmax_fwd(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double m, s
    with nogil:
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(d):
                out[i, j] = exp(x[i, j] - m)
                s += out[i, j]
            for j in range(d):
                out[i, j] /= s
    return out_arr


def softmax_bwd(double[:, ::1] p, double[:, ::1] gp):
    cdef Py_ssize_t n = p.shape[0], d = p.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(d):
                dot += gp[i, j] * p[i, j]
            for j in range(d):
                out[i, j] = p[i, j] * (gp[i, j] - dot)
    return out_arr


def xent_fwd(double[:, ::1] logits, cnp.int64_t[::1] targets):
    cdef Py_ssize_t n = logits.shape[0], d = logits.shape[1], i, j
    losses_arr = np.empty(n, dtype=np.float64)
    probs_arr = np.empty((n, d), dtype=np.float64)
    cdef double[::1] losses = losses_arr
    cdef double[:, ::1] probs = probs_arr
    cdef double m, s
    with nogil:
        for i in range(n):
            m = logits[i, 0]
            for j in range(1, d):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(d):
                probs[i, j] = exp(logits[i, j] - m)
                s += probs[i, j]
            for j in range(d):
                probs[i, j] /= s
            losses[i] = log(s) + m - logits[i, targets[i]]
    return losses_arr, probs_arr


def xent_bwd(double[:, ::1] probs, cnp.int64_t[::1] targets, double[::1] glosses):
    cdef Py_ssize_t n = probs.shape[0], d = probs.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(d):
                out[i, j] = probs[i, j] * glosses[i]
            out[i, targets[i]] -= glosses[i]
    return out_arr


# ---- moving-average updates (elementwise; bitwise-equal across backends) ----

def ema_update(cnp.ndarray dst, cnp.ndarray src, double m):
    cdef double[::1] d1 = dst.reshape(-1)
    cdef double[::1] s1 = src.reshape(-1)
    cdef Py_ssize_t n = d1.shape[0], i
    cdef double w = 1.0 - m
    with nogil:
        for i in range(n):
            d1[i] = d1[i] * m + w * s1[i]


def proto_ema_update(double[:, ::1] protos, double[:, ::1] z, cnp.int64_t[::1] labels, double m):
    cdef Py_ssize_t n = labels.shape[0], d = protos.shape[1], i, j
    cdef cnp.int64_t k
    cdef double w = 1.0 - m
    with nogil:
        for i in range(n):
            k = labels[i]
            if k >= 0:
                for j in range(d):
                    protos[k, j] = protos[k, j] * m + w * z[i, j]
