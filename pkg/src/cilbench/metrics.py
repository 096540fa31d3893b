"""Accuracy aggregates and memory-aware performance measures.

Unit conventions (chosen so the headline numbers land on the scale of the
reference results, and documented here because they are easy to mix up):

* AUC integrates accuracy **as a fraction in [0, 1]** over memory in MB via
  the trapezoid rule, so a constant 66% curve spanning 15.9 MB scores ~10.5;
* APM divides average accuracy **in percent** by memory in MB.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence


def average_accuracy(stage_accs: Sequence[float]) -> float:
    """Arithmetic mean of per-stage accuracies, reported to 2 decimals.

    Rounds half up in decimal (58.125 -> 58.13), matching how results are
    conventionally tabulated; plain float rounding would be binary-biased.
    """
    if not stage_accs:
        raise ValueError("no stage accuracies")
    total = sum(Decimal(str(a)) for a in stage_accs)
    mean = total / Decimal(len(stage_accs))
    return float(mean.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class PMCurve:
    """Performance-memory curve: (memory_MB, avg_acc_pct, last_acc_pct) points."""

    points: list[tuple[float, float, float]]

    def __post_init__(self):
        for prev, nxt in zip(self.points, self.points[1:]):
            if nxt[0] <= prev[0]:
                raise ValueError("memory coordinates must be strictly increasing")
        for _, avg, last in self.points:
            if not (0.0 <= avg <= 100.0 and 0.0 <= last <= 100.0):
                raise ValueError("accuracies must lie in [0, 100]")


def auc(curve: PMCurve, which: str = "average") -> float:
    """Trapezoidal area under accuracy-as-fraction over the memory span."""
    if which not in ("average", "last"):
        raise ValueError("which must be 'average' or 'last'")
    if len(curve.points) < 2:
        raise ValueError("AUC needs at least 2 curve points")
    idx = 1 if which == "average" else 2
    area = 0.0
    for (x0, *y0), (x1, *y1) in zip(curve.points, curve.points[1:]):
        area += (x1 - x0) * (y0[idx - 1] + y1[idx - 1]) / 200.0
    return area


def apm(avg_acc_pct: float, memory_mb: float) -> float:
    """Accuracy (percent) per megabyte."""
    if memory_mb <= 0.0:
        raise ValueError("memory must be positive")
    return avg_acc_pct / memory_mb


def forgetting_profile(per_stage_per_task_acc: Sequence[Sequence[float]]) -> list[float]:
    """Per-task drop from the accuracy when first learned to the final stage.

    Input is stage-major: row b holds accuracies of tasks 0..b at stage b.
    """
    n_stages = len(per_stage_per_task_acc)
    if n_stages == 0:
        raise ValueError("empty accuracy matrix")
    for b, row in enumerate(per_stage_per_task_acc):
        if len(row) != b + 1:
            raise ValueError(f"stage {b} should hold {b + 1} task accuracies, got {len(row)}")
    final = per_stage_per_task_acc[-1]
    return [per_stage_per_task_acc[t][t] - final[t] for t in range(n_stages)]


def metrics_table(entries: Sequence[dict]) -> str:
    """CSV with one row per method: memory point, accuracies and the
    memory-aware measures."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "memory_MB", "avg", "last", "AUC-A", "AUC-L", "APM-S", "APM-E"])
    for e in entries:
        writer.writerow([
            e["method"],
            f"{e['memory_MB']:.6g}",
            f"{e['avg']:.6g}",
            f"{e['last']:.6g}",
            f"{e['auc_a']:.6g}" if e.get("auc_a") is not None else "",
            f"{e['auc_l']:.6g}" if e.get("auc_l") is not None else "",
            f"{e['apm_s']:.6g}" if e.get("apm_s") is not None else "",
            f"{e['apm_e']:.6g}" if e.get("apm_e") is not None else "",
        ])
    return buf.getvalue()
