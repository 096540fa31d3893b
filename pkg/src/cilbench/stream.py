"""Base-x / Inc-y task splitting over a shuffled class order.

Stage 1 holds the x base classes (or the first y classes when x = 0); every
later stage introduces y fresh classes. Class identities are remapped to
classifier columns in order of first appearance, so the label a learner sees
is its column index.
"""

from __future__ import annotations

from dataclasses import dataclass

from .datasets import Dataset
from .prng import shuffle_class_order


@dataclass(frozen=True)
class SplitSpec:
    """x base classes, then y classes per incremental stage, C total."""

    base_classes: int
    increment: int
    total_classes: int

    def __post_init__(self):
        x, y, c = self.base_classes, self.increment, self.total_classes
        if c < 1 or y < 1 or x < 0 or x > c:
            raise ValueError(f"invalid split: x={x}, y={y}, C={c}")
        if x == 0 and c % y != 0:
            raise ValueError(f"increment {y} does not divide {c} classes (x=0)")
        if x > 0 and (c - x) % y != 0:
            raise ValueError(f"increment {y} does not divide remaining {c - x} classes (x={x})")

    @property
    def stage_count(self) -> int:
        if self.base_classes == 0:
            return self.total_classes // self.increment
        return 1 + (self.total_classes - self.base_classes) // self.increment


@dataclass
class TaskStream:
    """Resolved stage structure for one dataset + split + class order."""

    class_order: list[int]
    stage_classes: list[list[int]]          # global class ids per stage
    stage_train_indices: list[list[int]]    # dataset train indices per stage
    stage_test_indices: list[list[int]]     # dataset test indices per stage
    column_of: dict[int, int]               # global class id -> classifier column

    @property
    def stage_count(self) -> int:
        return len(self.stage_classes)

    def stage_columns(self, stage: int) -> list[int]:
        """Columns introduced at 1-based ``stage``."""
        return [self.column_of[c] for c in self.stage_classes[stage - 1]]

    def seen_column_count(self, stage: int) -> int:
        return sum(len(s) for s in self.stage_classes[:stage])


def make_stream(dataset: Dataset, split: SplitSpec, class_order_seed: int) -> TaskStream:
    if split.total_classes != dataset.n_classes:
        raise ValueError(f"split covers {split.total_classes} classes, dataset has {dataset.n_classes}")
    order = shuffle_class_order(dataset.n_classes, class_order_seed)
    stage_classes: list[list[int]] = []
    cursor = 0
    if split.base_classes > 0:
        stage_classes.append(order[:split.base_classes])
        cursor = split.base_classes
    while cursor < len(order):
        stage_classes.append(order[cursor:cursor + split.increment])
        cursor += split.increment
    sets = [set(s) for s in stage_classes]
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            if sets[i] & sets[j]:
                raise ValueError("stage class sets overlap")
    column_of = {}
    for classes in stage_classes:
        for c in classes:
            column_of[c] = len(column_of)
    stage_train = [
        [i for c in classes for i in dataset.train_indices_of(c)]
        for classes in stage_classes
    ]
    stage_test = [
        [i for c in classes for i in dataset.test_indices_of(c)]
        for classes in stage_classes
    ]
    return TaskStream(order, stage_classes, stage_train, stage_test, column_of)
