# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: fused minibatch forward/backward for the hinge risk and
in-place clip-then-prune. Semantics match ``_kernels_py`` exactly; only the
floating-point summation order differs.
"""

import numpy as np

from libcpp.vector cimport vector
from libcpp.algorithm cimport nth_element
from libcpp.functional cimport greater


cdef void _matmul_nt(const double[:, ::1] A, const double[:, ::1] W,
                     double[:, ::1] out) noexcept nogil:
    # out = A @ W.T
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t n = A.shape[0], p = W.shape[0], q = W.shape[1]
    cdef double acc
    for i in range(n):
        for j in range(p):
            acc = 0.0
            for k in range(q):
                acc = acc + A[i, k] * W[j, k]
            out[i, j] = acc


cdef void _relu_shift(const double[:, ::1] Z, const double[::1] V,
                      const double[:, ::1] M, bint has_mask,
                      double[:, ::1] A) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(Z.shape[0]):
        for j in range(Z.shape[1]):
            v = Z[i, j] - V[j]
            if v > 0.0:
                A[i, j] = v * M[i, j] if has_mask else v
            else:
                A[i, j] = 0.0


def forward_batch(weights, shifts, X, double bound):
    cdef Py_ssize_t n = X.shape[0], l, i
    cdef double[:, ::1] z = np.empty((n, weights[0].shape[0]))
    cdef double[:, ::1] a
    cdef double[:, ::1] dummy = np.empty((1, 1))
    _matmul_nt(np.ascontiguousarray(X, dtype=np.float64), weights[0], z)
    for l in range(len(shifts)):
        a = np.empty((n, z.shape[1]))
        _relu_shift(z, shifts[l], dummy, False, a)
        z = np.empty((n, weights[l + 1].shape[0]))
        _matmul_nt(a, weights[l + 1], z)
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = min(max(z[i, 0], -bound), bound)
    return out


def hinge_risk_grad(weights, shifts, X, y, double bound, masks=None):
    cdef Py_ssize_t n = X.shape[0], L = len(shifts)
    cdef Py_ssize_t l, i, j, k
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef bint has_mask = masks is not None
    cdef double[:, ::1] dummy = np.empty((1, 1))
    cdef double[:, ::1] z, a, W, M, delta, dz, gw
    cdef double[::1] V, gv
    cdef double out, f, margin, risk = 0.0, acc

    pre = [np.empty((n, weights[0].shape[0]))]
    _matmul_nt(Xv, weights[0], pre[0])
    acts = []
    for l in range(L):
        a = np.empty((n, pre[l].shape[1]))
        M = masks[l] if has_mask else dummy
        _relu_shift(pre[l], shifts[l], M, has_mask, a)
        acts.append(a)
        z = np.empty((n, weights[l + 1].shape[0]))
        _matmul_nt(a, weights[l + 1], z)
        pre.append(z)

    z = pre[L]
    delta = np.empty((n, 1))
    for i in range(n):
        out = z[i, 0]
        f = min(max(out, -bound), bound)
        margin = yv[i] * f
        if margin < 1.0:
            risk = risk + (1.0 - margin)
            if -bound <= out <= bound:
                delta[i, 0] = -yv[i] / n
            else:
                delta[i, 0] = 0.0
        else:
            delta[i, 0] = 0.0
    risk = risk / n

    grad_w = [None] * (L + 1)
    grad_v = [None] * L
    for l in range(L, 0, -1):
        a = acts[l - 1]
        W = weights[l]
        z = pre[l - 1]
        V = shifts[l - 1]
        M = masks[l - 1] if has_mask else dummy
        gw = np.zeros((W.shape[0], W.shape[1]))
        gv = np.zeros(W.shape[1])
        dz = np.empty((n, W.shape[1]))
        with nogil:
            for i in range(n):
                for j in range(W.shape[0]):
                    acc = delta[i, j]
                    if acc != 0.0:
                        for k in range(W.shape[1]):
                            gw[j, k] += acc * a[i, k]
                for k in range(W.shape[1]):
                    if z[i, k] - V[k] > 0.0:
                        acc = 0.0
                        for j in range(W.shape[0]):
                            acc = acc + delta[i, j] * W[j, k]
                        if has_mask:
                            acc = acc * M[i, k]
                        dz[i, k] = acc
                        gv[k] -= acc
                    else:
                        dz[i, k] = 0.0
        grad_w[l] = np.asarray(gw)
        grad_v[l - 1] = np.asarray(gv)
        delta = dz

    W = weights[0]
    gw = np.zeros((W.shape[0], W.shape[1]))
    with nogil:
        for i in range(n):
            for j in range(W.shape[0]):
                acc = delta[i, j]
                if acc != 0.0:
                    for k in range(W.shape[1]):
                        gw[j, k] += acc * Xv[i, k]
    grad_w[0] = np.asarray(gw)
    return risk, grad_w, grad_v


def clip_prune(arr, Py_ssize_t s, double bound):
    """Clip to ``[-B, B]`` then keep the ``s`` largest magnitudes, ties to lowest index."""
    cdef double[::1] flat = arr.reshape(-1)
    cdef Py_ssize_t size = flat.shape[0], i, kept = 0, n_gt = 0
    cdef vector[double] mags
    cdef double thr, m
    for i in range(size):
        flat[i] = min(max(flat[i], -bound), bound)
    if size <= s:
        return arr
    if s <= 0:
        for i in range(size):
            flat[i] = 0.0
        return arr
    mags.resize(size)
    for i in range(size):
        mags[i] = abs(flat[i])
    nth_element(mags.begin(), mags.begin() + (s - 1), mags.end(), greater[double]())
    thr = mags[s - 1]
    for i in range(size):
        if abs(flat[i]) > thr:
            n_gt += 1
    for i in range(size):
        m = abs(flat[i])
        if m > thr:
            continue
        if m == thr and kept < s - n_gt:
            kept += 1
        else:
            flat[i] = 0.0
    return arr
