# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend.

Mirrors ``_purepy`` loop-for-loop: same operation order, same accumulation
order, libm exp/log, no FP contraction (see setup.py flags), so results are
bit-identical to the pure-Python backend on the same platform.
"""

from libc.math cimport exp, log, isfinite


def matmul(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n, Py_ssize_t k, Py_ssize_t m):
    cdef Py_ssize_t i, j, p, ia, io
    cdef double s
    for i in range(n):
        ia = i * k
        io = i * m
        for j in range(m):
            s = 0.0
            for p in range(k):
                s += a[ia + p] * b[p * m + j]
            out[io + j] = s


def matmul_at_b(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n, Py_ssize_t k, Py_ssize_t m):
    cdef Py_ssize_t i, j, p
    cdef double s
    for p in range(k):
        for j in range(m):
            s = 0.0
            for i in range(n):
                s += a[i * k + p] * b[i * m + j]
            out[p * m + j] += s


def matmul_a_bt(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n, Py_ssize_t m, Py_ssize_t k):
    cdef Py_ssize_t i, j, p, ia, io, pb
    cdef double s
    for i in range(n):
        ia = i * m
        io = i * k
        for p in range(k):
            s = 0.0
            pb = p * m
            for j in range(m):
                s += a[ia + j] * b[pb + j]
            out[io + p] += s


def add_row(double[::1] a, double[::1] bias, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j, base
    for i in range(n):
        base = i * m
        for j in range(m):
            a[base + j] += bias[j]


def col_sum_acc(double[::1] a, double[::1] out, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j
    cdef double s
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += a[i * m + j]
        out[j] += s


def relu(double[::1] x, double[::1] out, Py_ssize_t size):
    cdef Py_ssize_t i
    cdef double v
    for i in range(size):
        v = x[i]
        out[i] = v if v > 0.0 else 0.0


def relu_bwd(double[::1] x, double[::1] gy, double[::1] gx, Py_ssize_t size):
    cdef Py_ssize_t i
    for i in range(size):
        if x[i] > 0.0:
            gx[i] += gy[i]


def softmax_rows(double[::1] logits, double[::1] probs, double[::1] lse, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j, base
    cdef double hi, total, e, v
    for i in range(n):
        base = i * m
        hi = logits[base]
        for j in range(1, m):
            v = logits[base + j]
            if v > hi:
                hi = v
        total = 0.0
        for j in range(m):
            e = exp(logits[base + j] - hi)
            probs[base + j] = e
            total += e
        for j in range(m):
            probs[base + j] /= total
        lse[i] = hi + log(total)


def sgd_update(double[::1] w, double[::1] g, double[::1] v, Py_ssize_t count, double lr, double momentum):
    cdef Py_ssize_t i
    cdef double vel
    for i in range(count):
        if not isfinite(g[i]):
            return i
    for i in range(count):
        vel = momentum * v[i] + g[i]
        v[i] = vel
        w[i] -= lr * vel
    return -1


def copy_submatrix(double[::1] src, double[::1] dst, Py_ssize_t n, Py_ssize_t src_stride, Py_ssize_t src_off,
                   Py_ssize_t dst_stride, Py_ssize_t dst_off, Py_ssize_t width):
    cdef Py_ssize_t i, j, sb, db
    for i in range(n):
        sb = i * src_stride + src_off
        db = i * dst_stride + dst_off
        for j in range(width):
            dst[db + j] = src[sb + j]


def add_submatrix(double[::1] src, double[::1] dst, Py_ssize_t n, Py_ssize_t src_stride, Py_ssize_t src_off,
                  Py_ssize_t dst_stride, Py_ssize_t dst_off, Py_ssize_t width):
    cdef Py_ssize_t i, j, sb, db
    for i in range(n):
        sb = i * src_stride + src_off
        db = i * dst_stride + dst_off
        for j in range(width):
            dst[db + j] += src[sb + j]


def acc(double[::1] dst, double[::1] src, Py_ssize_t size):
    cdef Py_ssize_t i
    for i in range(size):
        dst[i] += src[i]
