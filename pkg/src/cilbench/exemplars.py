"""Herding-based exemplar selection under a fixed global budget.

Selection ranks each instance by distance to its class feature mean and
keeps the closest ones; the ranking is nested, so shrinking a per-class
quota is a prefix truncation.
"""

from __future__ import annotations

import math
from typing import Sequence

from .diffcore import Tensor


class ExemplarSet:
    """Per-class ordered exemplar lists under a global instance budget."""

    def __init__(self, budget: int):
        if budget < 1:
            raise ValueError("budget must be positive")
        self.budget = budget
        self.per_class: dict[int, list[tuple[float, ...]]] = {}

    @property
    def total_count(self) -> int:
        return sum(len(v) for v in self.per_class.values())

    def classes(self) -> list[int]:
        return sorted(self.per_class)

    def items(self) -> list[tuple[tuple[float, ...], int]]:
        """(instance, label) pairs, classes in ascending label order."""
        out = []
        for label in self.classes():
            out.extend((inst, label) for inst in self.per_class[label])
        return out

    def store_class(self, label: int, instances: Sequence[Sequence[float]]) -> None:
        self.per_class[label] = [tuple(x) for x in instances]
        if self.total_count > self.budget:
            raise ValueError(f"exemplar budget {self.budget} exceeded")


def class_mean(features: Tensor) -> Tensor:
    """Mean feature vector over rows."""
    if len(features.shape) != 2 or features.shape[0] < 1:
        raise ValueError("need at least one feature row")
    n, d = features.shape
    mu = [0.0] * d
    for i in range(n):
        base = i * d
        for j in range(d):
            mu[j] += features.data[base + j]
    return Tensor([v / n for v in mu], (d,))


def herding_select(features: Tensor, m: int) -> list[int]:
    """Indices of the m rows closest (L2) to the class mean.

    Ascending distance, ties broken by ascending original index; the result
    for m is always a prefix of the result for m+1.
    """
    n, d = features.shape
    if not 1 <= m <= n:
        raise ValueError(f"m={m} out of range [1, {n}]")
    mu = class_mean(features).data
    dists = []
    for i in range(n):
        base = i * d
        s = 0.0
        for j in range(d):
            diff = mu[j] - features.data[base + j]
            s += diff * diff
        dists.append(math.sqrt(s))
    order = sorted(range(n), key=lambda i: (dists[i], i))
    return order[:m]


def rebalance(exemplar_set: ExemplarSet, budget: int, seen_class_count: int) -> ExemplarSet:
    """Truncate every class list to the equal-share quota floor(K / classes).

    Valid because herding order is nested: the first m entries of a class
    list are exactly the herding selection of size m.
    """
    if seen_class_count < 1:
        raise ValueError("seen_class_count must be >= 1")
    quota = budget // seen_class_count
    if quota == 0:
        raise ValueError(f"budget {budget} too small for {seen_class_count} classes")
    exemplar_set.budget = budget
    for label in exemplar_set.per_class:
        exemplar_set.per_class[label] = exemplar_set.per_class[label][:quota]
    return exemplar_set
