"""The five incremental learners behind one stage protocol.

Every stage: receive the new task's data plus the exemplar buffer, train for
a fixed number of epochs, update exemplars by herding, then report accuracy
over every class seen so far (prediction is a plain argmax over the
classifier's columns; the task id is never consulted).

Methods:

* ``replay``  cross-entropy over new data + exemplars;
* ``icarl``   adds a distillation term against the frozen previous model;
* ``wa``      icarl plus weight aligning of new-class classifier columns;
* ``der``     one new full backbone per task (old ones frozen), features
              concatenated, auxiliary new-vs-old head during training;
* ``memo``    like der but only the specialized suffix is new per task; the
              generalized trunk is shared (frozen or trainable by policy).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

from .diffcore import (OptimState, Tensor, affine, argmax_rows, backward,
                       concat_columns, sgd_step, softmax_cross_entropy,
                       kd_term, zero_grads)
from .exemplars import ExemplarSet, herding_select
from .netblocks import (ExpandableModel, expand_for_task, frozen_copy,
                        set_generalized_freeze)
from .prng import SplitMix64
from .probes import ProbeTrace, _block_grad_norms, block_shift_mse, snapshot_blocks

METHODS = ("replay", "icarl", "wa", "der", "memo")

_STRATEGY = {
    "replay": "single",
    "icarl": "single",
    "wa": "single",
    "der": "full_expand",
    "memo": "decoupled_expand",
}


def strategy_for(method: str) -> str:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    return _STRATEGY[method]


@dataclass
class LearnerConfig:
    method: str
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    lr_schedule: tuple[tuple[int, float], ...] = ((15, 0.1), (25, 0.1))
    lambda_policy: str = "class_ratio"      # "fixed" or "class_ratio"
    lambda_fixed: float = 0.5
    aux_weight: float = 1.0
    freeze_policy: str = "auto"             # memo trunk: always | never | auto
    freeze_threshold: int = 20
    memo_weight_norm: bool = True
    wa_align_each_epoch: bool = False
    classifier_init: str = "random"
    reherd_each_stage: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.lambda_policy not in ("fixed", "class_ratio"):
            raise ValueError("lambda_policy must be 'fixed' or 'class_ratio'")
        if not 0.0 <= self.lambda_fixed <= 1.0:
            raise ValueError("fixed lambda must lie in [0, 1]")
        if self.aux_weight < 0.0:
            raise ValueError("aux_weight must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        self.lr_schedule = tuple((int(e), float(m)) for e, m in self.lr_schedule)


@dataclass
class StageResult:
    stage: int
    accuracy: float                  # percent over all seen classes
    per_task_accuracy: list[float]   # percent per past task, oldest first
    wall_time: float
    final_loss: float

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "accuracy": self.accuracy,
            "per_task_accuracy": self.per_task_accuracy,
            "wall_time": self.wall_time,
            "final_loss": self.final_loss,
        }


class StageDataView:
    """Access-audited handle over the only instances a stage may read.

    Built from the new task's data plus the exemplar buffer and nothing
    else; every read is logged so tests can assert protocol legality.
    """

    def __init__(self, instances: Sequence[Sequence[float]], labels: Sequence[int],
                 provenance: Sequence[str]):
        if len(instances) != len(labels) or len(labels) != len(provenance):
            raise ValueError("instances, labels and provenance must align")
        self._x = [tuple(x) for x in instances]
        self._y = list(labels)
        self.provenance = list(provenance)
        self.accessed: set[int] = set()

    def __len__(self) -> int:
        return len(self._x)

    def get(self, index: int) -> tuple[tuple[float, ...], int]:
        if not 0 <= index < len(self._x):
            raise IndexError(f"illegal access outside the stage pool: {index}")
        self.accessed.add(index)
        return self._x[index], self._y[index]

    @staticmethod
    def for_stage(new_instances: Sequence[Sequence[float]], new_labels: Sequence[int],
                  exemplar_set: ExemplarSet | None) -> "StageDataView":
        xs = list(new_instances)
        ys = list(new_labels)
        prov = ["new"] * len(xs)
        if exemplar_set is not None:
            for inst, label in exemplar_set.items():
                xs.append(inst)
                ys.append(label)
                prov.append("exemplar")
        return StageDataView(xs, ys, prov)


@dataclass
class StageInputs:
    """Everything the runner hands a learner for one stage."""

    stage: int                                   # 1-based
    view: StageDataView                          # training pool (labels = columns)
    new_columns: list[int]                       # columns introduced this stage
    total_columns: int                           # |Y_b| seen so far, incl. new
    base_class_count: int                        # |Y_1|
    new_instances_by_column: dict[int, list[tuple[float, ...]]]
    eval_sets: list[tuple[list[tuple[float, ...]], list[int]]]  # per past task

    @property
    def old_columns(self) -> int:
        return self.total_columns - len(self.new_columns)


# ---------------------------------------------------------------------------
# loss pieces
# ---------------------------------------------------------------------------


def lambda_value(policy: str, n_old: int, n_total: int, fixed: float = 0.5) -> float:
    """Distillation weight: fixed, or the old-class share |Y_{b-1}|/|Y_b|."""
    if n_old >= n_total:
        raise ValueError("old class count must be smaller than the total")
    if policy == "fixed":
        return fixed
    if policy == "class_ratio":
        return n_old / n_total
    raise ValueError(f"unknown lambda policy {policy!r}")


def loss_icarl(logits_new: Tensor, logits_old: Tensor | None, labels: Sequence[int],
               lam: float) -> Tensor:
    """(1 - lam) * cross-entropy + lam * distillation against the old model.

    lam = 0 reduces exactly to plain cross-entropy (the distillation branch
    is not even evaluated, keeping the replay-equivalence bitwise).
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if lam == 0.0:
        return softmax_cross_entropy(logits_new, labels)
    if logits_old is None:
        raise ValueError("distillation requested but there is no previous-stage model")
    ce = softmax_cross_entropy(logits_new, labels)
    kd = kd_term(logits_new, logits_old)
    return ce * (1.0 - lam) + kd * lam


def aux_remap_labels(labels: Sequence[int], new_classes: Sequence[int],
                     seen_classes: Sequence[int] | None = None) -> list[int]:
    """Map labels onto the auxiliary head: position within the new-class
    list, or the single trailing 'old' bucket (index len(new_classes))."""
    pos = {c: i for i, c in enumerate(new_classes)}
    seen = set(seen_classes) if seen_classes is not None else None
    out = []
    for y in labels:
        if y in pos:
            out.append(pos[y])
        elif seen is not None and y not in seen:
            raise ValueError(f"label {y} was never seen")
        else:
            out.append(len(new_classes))
    return out


def loss_expand(features: Tensor, classifier: Tensor, labels: Sequence[int],
                aux_logits: Tensor | None, aux_labels: Sequence[int] | None,
                aux_weight: float) -> Tensor:
    """Cross-entropy over concatenated features plus the weighted auxiliary
    new-vs-old term (absent in the first stage)."""
    main = softmax_cross_entropy(affine(features, classifier), labels)
    if aux_logits is None or aux_weight == 0.0:
        return main
    return main + softmax_cross_entropy(aux_logits, aux_labels) * aux_weight


def weight_align(classifier: Tensor, old_columns: Sequence[int],
                 new_columns: Sequence[int]) -> Tensor:
    """Scale new-class columns so their mean L2 norm matches the old ones."""
    if not old_columns or not new_columns:
        raise ValueError("both column sets must be non-empty")
    rows, cols = classifier.shape

    def col_norm(j: int) -> float:
        s = 0.0
        for i in range(rows):
            v = classifier.data[i * cols + j]
            s += v * v
        return math.sqrt(s)

    mean_old = sum(col_norm(j) for j in old_columns) / len(old_columns)
    mean_new = sum(col_norm(j) for j in new_columns) / len(new_columns)
    if mean_new == 0.0:
        raise ValueError("new-class columns have zero norm; cannot align")
    gamma = mean_old / mean_new
    for j in new_columns:
        for i in range(rows):
            classifier.data[i * cols + j] *= gamma
    return classifier


# ---------------------------------------------------------------------------
# stage protocol
# ---------------------------------------------------------------------------


def train_stage(model: ExpandableModel, inputs: StageInputs, exemplar_set: ExemplarSet,
                config: LearnerConfig, stage_seed: int,
                probe_trace: ProbeTrace | None = None) -> tuple[ExpandableModel, StageResult]:
    """Run one incremental stage and return the trained model + its result.

    Expansion methods expand before training; the auxiliary head is dropped
    afterwards; exemplars are re-selected under the equal-share quota.
    """
    start = time.perf_counter()
    if not inputs.new_columns:
        raise ValueError("stage has no new classes")
    if len(inputs.view) == 0:
        raise ValueError("stage has no training data")
    if inputs.old_columns < 0:
        raise ValueError("inconsistent column counts")
    method = config.method
    rng = SplitMix64(stage_seed)
    growth_seed = rng.spawn_seed()

    old_model = None
    lam = 0.0
    if method in ("icarl", "wa") and inputs.stage >= 2:
        old_model = frozen_copy(model)
        lam = lambda_value(config.lambda_policy, inputs.old_columns,
                           inputs.total_columns, config.lambda_fixed)

    if inputs.stage >= 2:
        if strategy_for(method) == "single":
            model.grow_for_new_classes(len(inputs.new_columns), growth_seed)
        else:
            expand_for_task(model, len(inputs.new_columns), growth_seed)
            if method == "memo":
                set_generalized_freeze(model, config.freeze_policy,
                                       inputs.base_class_count, config.freeze_threshold)
    if model.n_classes != inputs.total_columns:
        raise ValueError(f"model has {model.n_classes} classes, stage expects {inputs.total_columns}")

    opt = OptimState(model.trainable_params(), config.learning_rate,
                     config.momentum, config.lr_schedule)
    order = list(range(len(inputs.view)))
    snap_first = snap_last = None
    final_loss = math.nan
    for epoch in range(config.epochs):
        rng.shuffle(order)
        for lo in range(0, len(order), config.batch_size):
            batch_idx = order[lo:lo + config.batch_size]
            xb, yb = _gather(inputs.view, batch_idx, model.spec.input_dim)
            loss = _stage_loss(method, model, old_model, xb, yb, lam, inputs, config)
            backward(loss)
            final_loss = loss.item()
            if probe_trace is not None:
                probe_trace.record_step_norms(inputs.stage, _block_grad_norms(model))
            sgd_step(opt, epoch)
            zero_grads(opt.params)
        if config.method == "wa" and config.wa_align_each_epoch and inputs.stage >= 2:
            weight_align(model.classifier, list(range(inputs.old_columns)), inputs.new_columns)
        if epoch == 0:
            snap_first = snapshot_blocks(model)
    snap_last = snapshot_blocks(model)
    if probe_trace is not None:
        probe_trace.shift_mse[inputs.stage] = block_shift_mse(snap_first, snap_last)

    if inputs.stage >= 2:
        old_cols = list(range(inputs.old_columns))
        if method == "wa" and not config.wa_align_each_epoch:
            weight_align(model.classifier, old_cols, inputs.new_columns)
        if method == "memo" and config.memo_weight_norm:
            weight_align(model.classifier, old_cols, inputs.new_columns)

    model.aux_classifier = None
    update_exemplars(exemplar_set, model, inputs, config.reherd_each_stage)

    overall, per_task = evaluate(model, inputs.eval_sets)
    result = StageResult(
        stage=inputs.stage,
        accuracy=overall,
        per_task_accuracy=per_task,
        wall_time=time.perf_counter() - start,
        final_loss=final_loss,
    )
    return model, result


def _gather(view: StageDataView, indices: Sequence[int], dim: int) -> tuple[Tensor, list[int]]:
    rows, labels = [], []
    for i in indices:
        x, y = view.get(i)
        rows.append(x)
        labels.append(y)
    buf = [v for row in rows for v in row]
    return Tensor(buf, (len(rows), dim)), labels


def _stage_loss(method: str, model: ExpandableModel, old_model: ExpandableModel | None,
                xb: Tensor, yb: list[int], lam: float, inputs: StageInputs,
                config: LearnerConfig) -> Tensor:
    if method in ("der", "memo"):
        parts = model.forward_parts(xb)
        features = concat_columns(parts)
        aux_logits = aux_labels = None
        if inputs.stage >= 2 and model.aux_classifier is not None and config.aux_weight > 0.0:
            aux_logits = affine(parts[-1], model.aux_classifier)
            aux_labels = aux_remap_labels(yb, inputs.new_columns,
                                          range(inputs.total_columns))
        return loss_expand(features, model.classifier, yb, aux_logits, aux_labels,
                           config.aux_weight)
    logits = model.logits(xb)
    if method == "replay" or inputs.stage == 1:
        return softmax_cross_entropy(logits, yb)
    old_logits = old_model.logits(xb)
    return loss_icarl(logits, old_logits, yb, lam)


# ---------------------------------------------------------------------------
# exemplar maintenance and evaluation
# ---------------------------------------------------------------------------


def extract_features(model: ExpandableModel, instances: Sequence[Sequence[float]]) -> Tensor:
    """Concatenated features of raw instances, detached from any graph."""
    dim = model.spec.input_dim
    buf = [v for row in instances for v in row]
    x = Tensor(buf, (len(instances), dim))
    feats = model.forward_features(x)
    return Tensor(feats.data, feats.shape)


def update_exemplars(exemplar_set: ExemplarSet, model: ExpandableModel,
                     inputs: StageInputs, reherd: bool) -> None:
    """Equal-share re-selection after a stage.

    New classes: herding over the stage's data. Old classes: either re-rank
    the stored pool with current features (reherd) or truncate in stored
    order; both end at quota floor(K / seen_classes).
    """
    quota = exemplar_set.budget // inputs.total_columns
    if quota == 0:
        raise ValueError(
            f"budget {exemplar_set.budget} too small for {inputs.total_columns} classes")
    for label in exemplar_set.classes():
        stored = exemplar_set.per_class[label]
        if reherd and len(stored) > 1:
            feats = extract_features(model, stored)
            ranked = herding_select(feats, min(quota, len(stored)))
            exemplar_set.per_class[label] = [stored[i] for i in ranked]
        else:
            exemplar_set.per_class[label] = stored[:quota]
    for col in inputs.new_columns:
        pool = inputs.new_instances_by_column[col]
        feats = extract_features(model, pool)
        chosen = herding_select(feats, min(quota, len(pool)))
        exemplar_set.store_class(col, [pool[i] for i in chosen])


def evaluate(model: ExpandableModel,
             eval_sets: Sequence[tuple[list[tuple[float, ...]], list[int]]]) -> tuple[float, list[float]]:
    """Top-1 accuracy over all seen classes and per past task (percent)."""
    per_task = []
    correct = total = 0
    dim = model.spec.input_dim
    for xs, ys in eval_sets:
        if not xs:
            per_task.append(0.0)
            continue
        buf = [v for row in xs for v in row]
        x = Tensor(buf, (len(xs), dim))
        preds = argmax_rows(model.logits(x))
        hits = sum(1 for p, y in zip(preds, ys) if p == y)
        per_task.append(100.0 * hits / len(ys))
        correct += hits
        total += len(ys)
    overall = 100.0 * correct / total if total else 0.0
    return overall, per_task
