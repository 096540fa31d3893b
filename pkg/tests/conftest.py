from __future__ import annotations

import math

from cilbench.diffcore import Tensor


def finite_difference_gradients(loss_fn, params: list[Tensor], h: float = 1e-6) -> list[list[float]]:
    """Central finite differences of a forward-only loss w.r.t. each parameter.

    Independent of the reverse-mode path: only re-evaluates loss_fn with
    perturbed parameter buffers.
    """
    grads = []
    for p in params:
        g = []
        for i in range(p.numel):
            keep = p.data[i]
            p.data[i] = keep + h
            up = loss_fn()
            p.data[i] = keep - h
            down = loss_fn()
            p.data[i] = keep
            g.append((up - down) / (2.0 * h))
        grads.append(g)
    return grads


def relative_error(a: float, b: float) -> float:
    """|a - b| / max(|a|, |b|, 1): clamped so near-zero gradients don't explode."""
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def max_param_rel_error(params: list[Tensor], fd: list[list[float]]) -> float:
    worst = 0.0
    for p, g_fd in zip(params, fd):
        assert p.grad is not None, f"missing gradient on {p.name}"
        for analytic, numeric in zip(p.grad, g_fd):
            worst = max(worst, relative_error(analytic, numeric))
    return worst


def nearest_centroid_accuracy(train_x, train_y, test_x, test_y, n_classes: int) -> float:
    """1-nearest-centroid classifier accuracy in percent."""
    dim = len(train_x[0])
    sums = [[0.0] * dim for _ in range(n_classes)]
    counts = [0] * n_classes
    for x, y in zip(train_x, train_y):
        counts[y] += 1
        for j in range(dim):
            sums[y][j] += x[j]
    cents = [[s / c for s in row] for row, c in zip(sums, counts)]
    hits = 0
    for x, y in zip(test_x, test_y):
        best, best_c = math.inf, -1
        for c, mu in enumerate(cents):
            d = sum((a - b) ** 2 for a, b in zip(x, mu))
            if d < best:
                best, best_c = d, c
        hits += best_c == y
    return 100.0 * hits / len(test_y)
