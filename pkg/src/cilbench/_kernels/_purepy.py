"""Pure-Python kernel backend.

Operates on flat row-major ``array('d')`` buffers. Loop structure and
accumulation order are the reference semantics: the compiled backend in
``_fastk.pyx`` mirrors them exactly so the two produce bit-identical
results (FP contraction is disabled there for this reason).
"""

from __future__ import annotations

import math


def matmul(a, b, out, n: int, k: int, m: int) -> None:
    """out(n x m) = A(n x k) @ B(k x m), overwriting out."""
    for i in range(n):
        ia = i * k
        io = i * m
        for j in range(m):
            s = 0.0
            for p in range(k):
                s += a[ia + p] * b[p * m + j]
            out[io + j] = s


def matmul_at_b(a, b, out, n: int, k: int, m: int) -> None:
    """out(k x m) += A(n x k)^T @ B(n x m)."""
    for p in range(k):
        for j in range(m):
            s = 0.0
            for i in range(n):
                s += a[i * k + p] * b[i * m + j]
            out[p * m + j] += s


def matmul_a_bt(a, b, out, n: int, m: int, k: int) -> None:
    """out(n x k) += A(n x m) @ B(k x m)^T."""
    for i in range(n):
        ia = i * m
        io = i * k
        for p in range(k):
            s = 0.0
            pb = p * m
            for j in range(m):
                s += a[ia + j] * b[pb + j]
            out[io + p] += s


def add_row(a, bias, n: int, m: int) -> None:
    """a[i, j] += bias[j] for every row i."""
    for i in range(n):
        base = i * m
        for j in range(m):
            a[base + j] += bias[j]


def col_sum_acc(a, out, n: int, m: int) -> None:
    """out[j] += sum_i a[i, j]."""
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += a[i * m + j]
        out[j] += s


def relu(x, out, size: int) -> None:
    for i in range(size):
        v = x[i]
        out[i] = v if v > 0.0 else 0.0


def relu_bwd(x, gy, gx, size: int) -> None:
    """gx += gy where the forward input was strictly positive."""
    for i in range(size):
        if x[i] > 0.0:
            gx[i] += gy[i]


def softmax_rows(logits, probs, lse, n: int, m: int) -> None:
    """Row softmax with max subtraction; lse[i] = logsumexp of row i."""
    for i in range(n):
        base = i * m
        hi = logits[base]
        for j in range(1, m):
            v = logits[base + j]
            if v > hi:
                hi = v
        total = 0.0
        for j in range(m):
            e = math.exp(logits[base + j] - hi)
            probs[base + j] = e
            total += e
        for j in range(m):
            probs[base + j] /= total
        lse[i] = hi + math.log(total)


def sgd_update(w, g, v, count: int, lr: float, momentum: float) -> int:
    """v = momentum*v + g; w -= lr*v. Returns first non-finite grad index, else -1."""
    for i in range(count):
        if not math.isfinite(g[i]):
            return i
    for i in range(count):
        vel = momentum * v[i] + g[i]
        v[i] = vel
        w[i] -= lr * vel
    return -1


def copy_submatrix(src, dst, n: int, src_stride: int, src_off: int,
                   dst_stride: int, dst_off: int, width: int) -> None:
    """dst[i, dst_off:dst_off+width] = src[i, src_off:src_off+width]."""
    for i in range(n):
        sb = i * src_stride + src_off
        db = i * dst_stride + dst_off
        for j in range(width):
            dst[db + j] = src[sb + j]


def add_submatrix(src, dst, n: int, src_stride: int, src_off: int,
                  dst_stride: int, dst_off: int, width: int) -> None:
    """dst[i, dst_off:dst_off+width] += src[i, src_off:src_off+width]."""
    for i in range(n):
        sb = i * src_stride + src_off
        db = i * dst_stride + dst_off
        for j in range(width):
            dst[db + j] += src[sb + j]


def acc(dst, src, size: int) -> None:
    for i in range(size):
        dst[i] += src[i]
