"""Network-behavior probes: block gradient norms, block shift, feature CKA.

These quantify which depths of the backbone move during incremental
training (gradient norm and first-to-last-epoch shift per block) and how
similar the representations of independently trained task backbones are
(linear centered kernel alignment at a shallow and a deep tap point).
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import _kernels as K
from .diffcore import Tensor, backward, zero_grads
from .netblocks import BackboneState, ExpandableModel


def grad_norm_per_block(model: ExpandableModel, batch, loss_fn: Callable) -> dict[str, float]:
    """L2 norm of the concatenated parameter gradients within each block.

    Runs one forward/backward of ``loss_fn(model, batch)`` from clean
    gradients. Frozen blocks report 0.
    """
    params = model.all_params()
    zero_grads(params)
    loss = loss_fn(model, batch)
    backward(loss)
    norms = _block_grad_norms(model)
    zero_grads(params)
    return norms


def _block_grad_norms(model: ExpandableModel) -> dict[str, float]:
    """Read per-block gradient norms off whatever backward pass just ran."""
    norms = {}
    for label, block in model.block_map():
        if block.frozen:
            norms[label] = 0.0
            continue
        s = 0.0
        for p in block.params():
            if p.grad is not None:
                for g in p.grad:
                    s += g * g
        norms[label] = math.sqrt(s)
    return norms


def snapshot_blocks(model: ExpandableModel) -> dict[str, list[array]]:
    """Copies of every block's parameter buffers, keyed by block label."""
    return {
        label: [array("d", p.data) for p in block.params()]
        for label, block in model.block_map()
    }


def block_shift_mse(params_epoch_first: dict[str, list[array]],
                    params_epoch_last: dict[str, list[array]]) -> dict[str, float]:
    """Per block, mean over its parameters of (theta_last - theta_first)^2."""
    if set(params_epoch_first) != set(params_epoch_last):
        raise ValueError("snapshots cover different blocks")
    out = {}
    for label in params_epoch_first:
        first, last = params_epoch_first[label], params_epoch_last[label]
        if len(first) != len(last) or any(len(a) != len(b) for a, b in zip(first, last)):
            raise ValueError(f"snapshot shape mismatch for block {label}")
        total, count = 0.0, 0
        for a, b in zip(first, last):
            for x, y in zip(a, b):
                d = y - x
                total += d * d
            count += len(a)
        out[label] = total / count
    return out


def _center_columns(t: Tensor) -> array:
    n, d = t.shape
    centered = array("d", t.data)
    for j in range(d):
        s = 0.0
        for i in range(n):
            s += centered[i * d + j]
        mean = s / n
        for i in range(n):
            centered[i * d + j] -= mean
    return centered


def _frob(buf: array) -> float:
    s = 0.0
    for v in buf:
        s += v * v
    return math.sqrt(s)


def linear_cka(x: Tensor, y: Tensor) -> float:
    """Linear CKA between two feature matrices on the same instances.

    ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F * ||Yc^T Yc||_F) with column-centered
    matrices; defined as 0 when either denominator factor vanishes.
    """
    if len(x.shape) != 2 or len(y.shape) != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("feature matrices must be 2-D with matching rows")
    n = x.shape[0]
    if n < 2:
        raise ValueError("CKA needs at least 2 instances")
    p, q = x.shape[1], y.shape[1]
    xc, yc = _center_columns(x), _center_columns(y)
    cross = array("d", bytes(8 * q * p))
    K.matmul_at_b(yc, xc, cross, n, q, p)
    xx = array("d", bytes(8 * p * p))
    K.matmul_at_b(xc, xc, xx, n, p, p)
    yy = array("d", bytes(8 * q * q))
    K.matmul_at_b(yc, yc, yy, n, q, q)
    denom = _frob(xx) * _frob(yy)
    if denom == 0.0:
        return 0.0
    num = 0.0
    for v in cross:
        num += v * v
    return num / denom


def cka_matrix(backbones: Sequence[BackboneState], block_depth: str, batch: Tensor) -> list[list[float]]:
    """Pairwise linear CKA of one tap point's features across backbones.

    ``shallow`` taps the first block's output, ``deep`` the last block's.
    """
    if block_depth not in ("shallow", "deep"):
        raise ValueError("block_depth must be 'shallow' or 'deep'")
    if len(backbones) < 2:
        raise ValueError("need at least 2 backbones to compare")
    tap = 0 if block_depth == "shallow" else -1
    feats = [bb.forward_blocks(batch)[tap] for bb in backbones]
    t = len(feats)
    mat = [[0.0] * t for _ in range(t)]
    for i in range(t):
        for j in range(i, t):
            value = linear_cka(feats[i], feats[j])
            mat[i][j] = value
            mat[j][i] = value
    return mat


def mean_offdiagonal(matrix: Sequence[Sequence[float]]) -> float:
    """Mean of the off-diagonal entries of a square matrix."""
    t = len(matrix)
    if t < 2:
        raise ValueError("need at least a 2x2 matrix")
    total = sum(matrix[i][j] for i in range(t) for j in range(t) if i != j)
    return total / (t * (t - 1))


@dataclass
class ProbeTrace:
    """Everything the probes recorded over one run.

    grad_norms: stage -> one {block: norm} dict per optimizer step.
    shift_mse:  stage -> {block: mse} between first- and last-epoch snapshots.
    cka_shallow / cka_deep: pairwise backbone similarity after the final stage.
    """

    grad_norms: dict[int, list[dict[str, float]]] = field(default_factory=dict)
    shift_mse: dict[int, dict[str, float]] = field(default_factory=dict)
    cka_shallow: list[list[float]] | None = None
    cka_deep: list[list[float]] | None = None

    def record_step_norms(self, stage: int, norms: dict[str, float]) -> None:
        self.grad_norms.setdefault(stage, []).append(norms)

    def mean_grad_norms(self, stage: int) -> dict[str, float]:
        """Per-block gradient norm averaged over the stage's optimizer steps."""
        steps = self.grad_norms[stage]
        labels = steps[0].keys()
        return {lb: sum(s[lb] for s in steps) / len(steps) for lb in labels}

    def to_dict(self) -> dict:
        return {
            "grad_norms": {str(s): steps for s, steps in sorted(self.grad_norms.items())},
            "shift_mse": {str(s): mse for s, mse in sorted(self.shift_mse.items())},
            "cka_shallow": self.cka_shallow,
            "cka_deep": self.cka_deep,
        }

    @staticmethod
    def from_dict(d: dict) -> "ProbeTrace":
        return ProbeTrace(
            grad_norms={int(s): steps for s, steps in d.get("grad_norms", {}).items()},
            shift_mse={int(s): mse for s, mse in d.get("shift_mse", {}).items()},
            cka_shallow=d.get("cka_shallow"),
            cka_deep=d.get("cka_deep"),
        )
