"""Minimal reverse-mode autodiff over dense float64 tensors.

Only the operations the incremental learners need are provided: affine maps,
ReLU, column concatenation, softmax cross-entropy, the distillation term that
matches a student's old-class distribution to a frozen teacher's, and scalar
combination of losses. Hot numeric work is delegated to the kernel backend
(compiled or pure Python, identical bits either way).

Parameters are ordinary tensors with ``requires_grad=True``; freezing a
parameter means flipping ``requires_grad`` off, after which it behaves as a
constant: no graph edges, no gradient, no optimizer update.
"""

from __future__ import annotations

import math
from array import array
from typing import Iterable, Sequence

from . import _kernels as K


def _zeros(size: int):
    return array("d", bytes(8 * size))


def _numel(shape: tuple[int, ...]) -> int:
    n = 1
    for s in shape:
        n *= s
    return n


class Tensor:
    """Dense row-major float64 tensor with an optional gradient slot."""

    __slots__ = ("shape", "data", "grad", "requires_grad", "name", "_parents", "_backprop", "_done")

    def __init__(self, data, shape: tuple[int, ...], requires_grad: bool = False, name: str | None = None):
        if not isinstance(data, array) or data.typecode != "d":
            data = array("d", data)
        if len(data) != _numel(shape):
            raise ValueError(f"shape {shape} does not match buffer of length {len(data)}")
        self.shape = shape
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backprop = None
        self._done = False

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zeros(shape: tuple[int, ...], requires_grad: bool = False, name: str | None = None) -> "Tensor":
        return Tensor(_zeros(_numel(shape)), shape, requires_grad, name)

    @staticmethod
    def from_rows(rows: Sequence[Sequence[float]], requires_grad: bool = False, name: str | None = None) -> "Tensor":
        n = len(rows)
        m = len(rows[0]) if n else 0
        buf = array("d")
        for r in rows:
            if len(r) != m:
                raise ValueError("ragged rows")
            buf.extend(r)
        return Tensor(buf, (n, m), requires_grad, name)

    @staticmethod
    def scalar(value: float) -> "Tensor":
        return Tensor(array("d", [value]), ())

    # -- inspection --------------------------------------------------------

    @property
    def numel(self) -> int:
        return _numel(self.shape)

    def item(self) -> float:
        if self.numel != 1:
            raise ValueError("item() on non-scalar tensor")
        return self.data[0]

    def tolist(self):
        if len(self.shape) == 2:
            n, m = self.shape
            return [list(self.data[i * m:(i + 1) * m]) for i in range(n)]
        return list(self.data)

    def clone(self, requires_grad: bool | None = None, name: str | None = None) -> "Tensor":
        rg = self.requires_grad if requires_grad is None else requires_grad
        return Tensor(array("d", self.data), self.shape, rg, name if name is not None else self.name)

    def ensure_grad(self):
        if self.grad is None:
            self.grad = _zeros(self.numel)
        return self.grad

    def assert_finite(self, context: str = "tensor") -> None:
        for i, v in enumerate(self.data):
            if not math.isfinite(v):
                raise FloatingPointError(f"non-finite value in {context} at flat index {i}")

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- scalar algebra (loss combination) ----------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor) or self.shape != () or other.shape != ():
            raise TypeError("tensor addition is only defined for scalar losses")
        out = Tensor.scalar(self.data[0] + other.data[0])
        if self.requires_grad or other.requires_grad:
            out.requires_grad = True
            out._parents = (self, other)

            def backprop(a=self, b=other, o=out):
                g = o.grad[0]
                if a.requires_grad:
                    a.ensure_grad()[0] += g
                if b.requires_grad:
                    b.ensure_grad()[0] += g

            out._backprop = backprop
        return out

    def __mul__(self, factor: float) -> "Tensor":
        if self.shape != ():
            raise TypeError("scalar multiplication is only defined for scalar losses")
        factor = float(factor)
        out = Tensor.scalar(self.data[0] * factor)
        if self.requires_grad:
            out.requires_grad = True
            out._parents = (self,)

            def backprop(a=self, o=out, c=factor):
                a.ensure_grad()[0] += c * o.grad[0]

            out._backprop = backprop
        return out

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w (+ b). x: (n,k), w: (k,m), b: (m,)."""
    if len(x.shape) != 2 or len(w.shape) != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"affine shape mismatch: x{x.shape} @ w{w.shape}")
    n, k = x.shape
    m = w.shape[1]
    if b is not None and b.shape != (m,):
        raise ValueError(f"bias shape {b.shape} does not match output width {m}")
    out = Tensor(_zeros(n * m), (n, m))
    K.matmul(x.data, w.data, out.data, n, k, m)
    if b is not None:
        K.add_row(out.data, b.data, n, m)
    needs = x.requires_grad or w.requires_grad or (b is not None and b.requires_grad)
    if needs:
        out.requires_grad = True
        out._parents = (x, w) if b is None else (x, w, b)

        def backprop(x=x, w=w, b=b, o=out, n=n, k=k, m=m):
            gy = o.grad
            if x.requires_grad:
                K.matmul_a_bt(gy, w.data, x.ensure_grad(), n, m, k)
            if w.requires_grad:
                K.matmul_at_b(x.data, gy, w.ensure_grad(), n, k, m)
            if b is not None and b.requires_grad:
                K.col_sum_acc(gy, b.ensure_grad(), n, m)

        out._backprop = backprop
    return out


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient at exactly 0 is 0."""
    out = Tensor(_zeros(x.numel), x.shape)
    K.relu(x.data, out.data, x.numel)
    if x.requires_grad:
        out.requires_grad = True
        out._parents = (x,)

        def backprop(x=x, o=out):
            K.relu_bwd(x.data, o.grad, x.ensure_grad(), x.numel)

        out._backprop = backprop
    return out


def concat_columns(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along columns, preserving part order."""
    if not parts:
        raise ValueError("nothing to concatenate")
    if len(parts) == 1:
        return parts[0]
    n = parts[0].shape[0]
    for p in parts:
        if len(p.shape) != 2 or p.shape[0] != n:
            raise ValueError("concat parts must be 2-D with matching row counts")
    total = sum(p.shape[1] for p in parts)
    out = Tensor(_zeros(n * total), (n, total))
    off = 0
    for p in parts:
        K.copy_submatrix(p.data, out.data, n, p.shape[1], 0, total, off, p.shape[1])
        off += p.shape[1]
    if any(p.requires_grad for p in parts):
        out.requires_grad = True
        out._parents = tuple(parts)

        def backprop(parts=tuple(parts), o=out, n=n, total=total):
            off = 0
            for p in parts:
                w = p.shape[1]
                if p.requires_grad:
                    K.add_submatrix(o.grad, p.ensure_grad(), n, total, off, w, 0, w)
                off += w

        out._backprop = backprop
    return out


def sum_elements(x: Tensor) -> Tensor:
    """Sum of all entries as a scalar tensor."""
    total = 0.0
    for v in x.data:
        total += v
    out = Tensor.scalar(total)
    if x.requires_grad:
        out.requires_grad = True
        out._parents = (x,)

        def backprop(x=x, o=out):
            g = o.grad[0]
            gx = x.ensure_grad()
            for i in range(x.numel):
                gx[i] += g

        out._backprop = backprop
    return out


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean over rows of -log softmax(logits)[label], max-subtracted for stability."""
    if len(logits.shape) != 2:
        raise ValueError("logits must be 2-D")
    n, m = logits.shape
    if len(labels) != n:
        raise ValueError(f"{len(labels)} labels for {n} rows")
    for y in labels:
        if not 0 <= y < m:
            raise ValueError(f"label {y} out of range [0, {m})")
    probs = _zeros(n * m)
    lse = _zeros(n)
    K.softmax_rows(logits.data, probs, lse, n, m)
    total = 0.0
    for i in range(n):
        total += lse[i] - logits.data[i * m + labels[i]]
    out = Tensor.scalar(total / n)
    if logits.requires_grad:
        out.requires_grad = True
        out._parents = (logits,)
        labels = list(labels)

        def backprop(logits=logits, o=out, probs=probs, labels=labels, n=n, m=m):
            gs = o.grad[0] / n
            gl = logits.ensure_grad()
            for i in range(n):
                base = i * m
                for j in range(m):
                    gl[base + j] += gs * probs[base + j]
                gl[base + labels[i]] -= gs

        out._backprop = backprop
    return out


def kd_term(new_logits: Tensor, old_logits: Tensor) -> Tensor:
    """Distillation: mean cross-entropy of the student's old-class softmax
    against the frozen teacher's distribution.

    The teacher distribution comes from ``old_logits`` (treated as constant);
    the student softmax is taken over the first ``old_classes`` columns of
    ``new_logits`` only.
    """
    if len(new_logits.shape) != 2 or len(old_logits.shape) != 2:
        raise ValueError("logits must be 2-D")
    n, m_new = new_logits.shape
    n_old, m_old = old_logits.shape
    if m_old == 0:
        raise ValueError("no old classes to distill from")
    if n_old != n:
        raise ValueError("row count mismatch between new and old logits")
    if m_old > m_new:
        raise ValueError(f"old class count {m_old} exceeds new class count {m_new}")
    teacher = _zeros(n * m_old)
    t_lse = _zeros(n)
    K.softmax_rows(old_logits.data, teacher, t_lse, n, m_old)
    restricted = _zeros(n * m_old)
    K.copy_submatrix(new_logits.data, restricted, n, m_new, 0, m_old, 0, m_old)
    student = _zeros(n * m_old)
    s_lse = _zeros(n)
    K.softmax_rows(restricted, student, s_lse, n, m_old)
    total = 0.0
    for i in range(n):
        base = i * m_old
        dot = 0.0
        for k in range(m_old):
            dot += teacher[base + k] * restricted[base + k]
        total += s_lse[i] - dot
    out = Tensor.scalar(total / n)
    if new_logits.requires_grad:
        out.requires_grad = True
        out._parents = (new_logits,)

        def backprop(new_logits=new_logits, o=out, student=student, teacher=teacher, n=n, m_new=m_new, m_old=m_old):
            gs = o.grad[0] / n
            gl = new_logits.ensure_grad()
            for i in range(n):
                gb = i * m_new
                sb = i * m_old
                for k in range(m_old):
                    gl[gb + k] += gs * (student[sb + k] - teacher[sb + k])

        out._backprop = backprop
    return out


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor with requires_grad.

    The loss must be a scalar produced by recorded operations; calling
    backward twice on the same loss raises.
    """
    if loss.shape != ():
        raise ValueError("backward requires a scalar loss")
    if loss._done:
        raise RuntimeError("backward already ran for this loss; build a new graph")
    if not math.isfinite(loss.item()):
        raise FloatingPointError(f"loss is non-finite: {loss.item()!r}")
    loss._done = True
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    loss.ensure_grad()[0] = 1.0
    for node in reversed(order):
        if node._backprop is not None and node.grad is not None:
            node._backprop()


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# SGD with momentum and a step-decay schedule
# ---------------------------------------------------------------------------


class OptimState:
    """Per-stage optimizer state: one velocity buffer per parameter.

    ``schedule`` is a sequence of (epoch, multiplier) pairs; the learning
    rate at epoch e is the base rate times the product of multipliers whose
    epoch threshold is <= e.
    """

    def __init__(self, params: Sequence[Tensor], learning_rate: float, momentum: float = 0.0,
                 schedule: Sequence[tuple[int, float]] = ()):
        if learning_rate <= 0.0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        self.params = list(params)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.schedule = sorted((int(e), float(m)) for e, m in schedule)
        self.velocity = [_zeros(p.numel) for p in self.params]

    def lr_at(self, epoch: int) -> float:
        lr = self.learning_rate
        for threshold, mult in self.schedule:
            if epoch >= threshold:
                lr *= mult
        if lr <= 0.0:
            raise ValueError("scheduled learning rate must stay positive")
        return lr


def sgd_step(state: OptimState, epoch: int) -> None:
    """v <- momentum*v + g; w <- w - lr*v for every tracked parameter.

    Gradients are read from each parameter's ``grad`` slot (missing grad is
    treated as zero) and consumed: slots are reset to None afterwards.
    A non-finite gradient raises, naming the parameter.
    """
    lr = state.lr_at(epoch)
    for p, v in zip(state.params, state.velocity):
        if not p.requires_grad:
            continue
        g = p.grad if p.grad is not None else _zeros(p.numel)
        bad = K.sgd_update(p.data, g, v, p.numel, lr, state.momentum)
        if bad >= 0:
            name = p.name or "<unnamed parameter>"
            raise FloatingPointError(f"non-finite gradient for {name} at flat index {bad}")
        p.grad = None


# ---------------------------------------------------------------------------
# inference helpers
# ---------------------------------------------------------------------------


def argmax_rows(t: Tensor) -> list[int]:
    """Row-wise argmax with lowest-index tie-break."""
    n, m = t.shape
    out = []
    for i in range(n):
        base = i * m
        best, best_j = t.data[base], 0
        for j in range(1, m):
            v = t.data[base + j]
            if v > best:
                best, best_j = v, j
        out.append(best_j)
    return out
