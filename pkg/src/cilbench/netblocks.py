"""Block-structured backbones and task-driven model expansion.

A backbone is a chain of dense blocks (affine + ReLU); block 0 embeds the
input, later blocks map hidden to hidden. The chain splits at a
decomposition index into a generalized prefix (shared, shallow) and a
specialized suffix (deep, one per task under the decoupled strategy).

Three growth strategies:

* ``single``           one backbone, retrained every stage;
* ``full_expand``      a complete new backbone per task, old ones frozen,
                       features concatenated;
* ``decoupled_expand`` a shared generalized trunk plus one specialized
                       suffix per task, features concatenated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .diffcore import Tensor, affine, concat_columns, relu
from .prng import SplitMix64

STRATEGIES = ("single", "full_expand", "decoupled_expand")


@dataclass
class BackboneSpec:
    """Width/depth of one backbone and where it splits into trunk/suffix."""

    input_dim: int
    hidden_dim: int
    num_blocks: int
    decomposition_index: int | None = None

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.num_blocks < 2:
            raise ValueError("need at least 2 blocks to decompose")
        if self.decomposition_index is None:
            self.decomposition_index = self.num_blocks - 1
        if not 1 <= self.decomposition_index < self.num_blocks:
            raise ValueError("decomposition index must lie in [1, num_blocks)")


class DenseBlock:
    """affine(in->out) followed by ReLU."""

    def __init__(self, w: Tensor, b: Tensor):
        self.w = w
        self.b = b
        self.frozen = False

    @property
    def in_dim(self) -> int:
        return self.w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w.shape[1]

    def params(self) -> list[Tensor]:
        return [self.w, self.b]

    def param_count(self) -> int:
        return self.w.numel + self.b.numel

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen
        self.w.requires_grad = not frozen
        self.b.requires_grad = not frozen

    def forward(self, x: Tensor) -> Tensor:
        return relu(affine(x, self.w, self.b))


class BackboneState:
    """An ordered chain of blocks; may be a full backbone, a trunk or a suffix."""

    def __init__(self, blocks: list[DenseBlock], creation_stage: int):
        self.blocks = blocks
        self.creation_stage = creation_stage
        for prev, nxt in zip(blocks, blocks[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError("block dimensions do not chain")

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block.forward(x)
        return x

    def forward_blocks(self, x: Tensor) -> list[Tensor]:
        """Per-block outputs, shallowest first."""
        outs = []
        for block in self.blocks:
            x = block.forward(x)
            outs.append(x)
        return outs

    def params(self) -> list[Tensor]:
        return [p for block in self.blocks for p in block.params()]

    def param_count(self) -> int:
        return sum(block.param_count() for block in self.blocks)

    def set_frozen(self, frozen: bool) -> None:
        for block in self.blocks:
            block.set_frozen(frozen)

    @property
    def frozen(self) -> bool:
        return all(block.frozen for block in self.blocks)


def _init_block(in_dim: int, out_dim: int, rng: SplitMix64, name: str) -> DenseBlock:
    """Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases."""
    bound = math.sqrt(6.0 / in_dim)
    w = Tensor.zeros((in_dim, out_dim), requires_grad=True, name=f"{name}.w")
    for i in range(in_dim * out_dim):
        w.data[i] = rng.next_uniform(-bound, bound)
    b = Tensor.zeros((out_dim,), requires_grad=True, name=f"{name}.b")
    return DenseBlock(w, b)


def _build_chain(dims: list[tuple[int, int]], rng: SplitMix64, prefix: str, creation_stage: int) -> BackboneState:
    blocks = [_init_block(i, o, rng, f"{prefix}.block{idx}") for idx, (i, o) in enumerate(dims)]
    return BackboneState(blocks, creation_stage)


def _full_dims(spec: BackboneSpec) -> list[tuple[int, int]]:
    d = spec.hidden_dim
    return [(spec.input_dim, d)] + [(d, d)] * (spec.num_blocks - 1)


def build(spec: BackboneSpec, seed: int, creation_stage: int = 1) -> BackboneState:
    """Full backbone, deterministically initialized from ``seed``."""
    rng = SplitMix64(seed)
    return _build_chain(_full_dims(spec), rng, f"stage{creation_stage}", creation_stage)


def build_trunk(spec: BackboneSpec, rng: SplitMix64) -> BackboneState:
    dims = _full_dims(spec)[: spec.decomposition_index]
    return _build_chain(dims, rng, "trunk", 1)


def build_suffix(spec: BackboneSpec, rng: SplitMix64, creation_stage: int) -> BackboneState:
    dims = _full_dims(spec)[spec.decomposition_index:]
    return _build_chain(dims, rng, f"stage{creation_stage}", creation_stage)


class ExpandableModel:
    """Backbone(s) plus a growing linear classifier over concatenated features.

    The classifier is bias-free: predictions are argmax of W^T features. An
    auxiliary classifier (new classes + one bucket for everything old) exists
    only while its task trains and never counts toward model size.
    """

    def __init__(self, strategy: str, spec: BackboneSpec, n_classes: int, seed: int,
                 classifier_init: str = "random"):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        if classifier_init not in ("random", "zero"):
            raise ValueError("classifier_init must be 'random' or 'zero'")
        self.strategy = strategy
        self.spec = spec
        self.classifier_init = classifier_init
        self.n_classes = 0
        self.trunk: BackboneState | None = None
        self.branches: list[BackboneState] = []
        self.aux_classifier: Tensor | None = None
        rng = SplitMix64(seed)
        if strategy == "decoupled_expand":
            self.trunk = build_trunk(spec, rng)
            self.branches = [build_suffix(spec, rng, 1)]
        else:
            self.branches = [_build_chain(_full_dims(spec), rng, "stage1", 1)]
        self.classifier = Tensor.zeros((self.feature_dim, 0), requires_grad=True, name="classifier")
        self._grow_classifier(n_classes, rng)

    # -- structure ----------------------------------------------------------

    @property
    def feature_dim(self) -> int:
        return len(self.branches) * self.spec.hidden_dim

    @property
    def task_count(self) -> int:
        return len(self.branches)

    def block_map(self) -> list[tuple[str, DenseBlock]]:
        """(label, block) pairs, shallowest first: trunk, then branches by stage."""
        out = []
        if self.trunk is not None:
            for i, blk in enumerate(self.trunk.blocks):
                out.append((f"trunk.{i}", blk))
        for br in self.branches:
            for i, blk in enumerate(br.blocks):
                out.append((f"stage{br.creation_stage}.{i}", blk))
        return out

    def backbone_params(self) -> list[Tensor]:
        params = []
        if self.trunk is not None:
            params.extend(self.trunk.params())
        for br in self.branches:
            params.extend(br.params())
        return params

    def all_params(self) -> list[Tensor]:
        params = self.backbone_params()
        params.append(self.classifier)
        if self.aux_classifier is not None:
            params.append(self.aux_classifier)
        return params

    def trainable_params(self) -> list[Tensor]:
        return [p for p in self.all_params() if p.requires_grad]

    # -- forward ------------------------------------------------------------

    def forward_parts(self, x: Tensor) -> list[Tensor]:
        """Per-branch feature tensors in ascending creation-stage order."""
        if x.shape[1] != self.spec.input_dim:
            raise ValueError(f"input width {x.shape[1]} != {self.spec.input_dim}")
        if self.strategy == "decoupled_expand":
            shared = self.trunk.forward(x)
            return [br.forward(shared) for br in self.branches]
        return [br.forward(x) for br in self.branches]

    def forward_features(self, x: Tensor) -> Tensor:
        return concat_columns(self.forward_parts(x))

    def logits_from_features(self, features: Tensor) -> Tensor:
        return affine(features, self.classifier)

    def logits(self, x: Tensor) -> Tensor:
        return self.logits_from_features(self.forward_features(x))

    # -- growth -------------------------------------------------------------

    def _grow_classifier(self, added_classes: int, rng: SplitMix64) -> None:
        """New (feature_dim x n_classes) matrix; the old-feature x old-class
        sub-block is copied bit-for-bit, every other entry is freshly
        initialized (uniform as in build, or zero per ``classifier_init``)."""
        old = self.classifier
        old_rows, old_cols = old.shape
        rows = self.feature_dim
        cols = self.n_classes + added_classes
        bound = math.sqrt(6.0 / rows)
        w = Tensor.zeros((rows, cols), requires_grad=True, name="classifier")
        for i in range(rows):
            for j in range(cols):
                if i < old_rows and j < old_cols:
                    w.data[i * cols + j] = old.data[i * old_cols + j]
                elif self.classifier_init == "random":
                    w.data[i * cols + j] = rng.next_uniform(-bound, bound)
        self.classifier = w
        self.n_classes = cols

    def grow_for_new_classes(self, added_classes: int, seed: int) -> None:
        """Classifier-only growth for the single-backbone strategy."""
        self._grow_classifier(added_classes, SplitMix64(seed))


def expand_for_task(model: ExpandableModel, new_class_count: int, seed: int) -> ExpandableModel:
    """Add a task branch: freeze history, extend features, grow the classifier.

    Creates the new branch (full backbone, or suffix on the shared trunk),
    freezes every earlier branch, grows the classifier to
    (task_count * hidden) x (old + new classes) with the old sub-block
    inherited, and installs a fresh auxiliary head of shape
    hidden x (new_class_count + 1).
    """
    if model.strategy == "single":
        raise ValueError("expand_for_task is undefined for the single-backbone strategy")
    if new_class_count < 1:
        raise ValueError("new_class_count must be positive")
    rng = SplitMix64(seed)
    for br in model.branches:
        br.set_frozen(True)
    stage = model.task_count + 1
    if model.strategy == "decoupled_expand":
        model.branches.append(build_suffix(model.spec, rng, stage))
    else:
        model.branches.append(_build_chain(_full_dims(model.spec), rng, f"stage{stage}", stage))
    model._grow_classifier(new_class_count, rng)
    d = model.spec.hidden_dim
    bound = math.sqrt(6.0 / d)
    aux = Tensor.zeros((d, new_class_count + 1), requires_grad=True, name=f"aux_stage{stage}")
    for i in range(aux.numel):
        aux.data[i] = rng.next_uniform(-bound, bound)
    model.aux_classifier = aux
    return model


def set_generalized_freeze(model: ExpandableModel, policy: str, base_class_count: int,
                           threshold: int = 20) -> ExpandableModel:
    """Freeze or release the shared trunk.

    ``always``/``never`` are unconditional; ``auto`` freezes when the base
    stage held at least ``threshold`` classes (enough to have learned
    transferable shallow features).
    """
    if model.strategy != "decoupled_expand":
        raise ValueError("generalized freeze policy applies to decoupled_expand models only")
    if policy not in ("always", "never", "auto"):
        raise ValueError(f"unknown freeze policy {policy!r}")
    freeze = policy == "always" or (policy == "auto" and base_class_count >= threshold)
    model.trunk.set_frozen(freeze)
    return model


def param_count(model: ExpandableModel) -> int:
    """Stored scalar parameters: trunk + branches + classifier (aux excluded)."""
    total = model.classifier.numel
    if model.trunk is not None:
        total += model.trunk.param_count()
    for br in model.branches:
        total += br.param_count()
    return total


def predict_param_count(spec: BackboneSpec, strategy: str, task_count: int, total_classes: int) -> int:
    """Closed-form model size after ``task_count`` tasks and ``total_classes``.

    Must agree with :func:`param_count` of an actually-built model; tested
    against it.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    d = spec.hidden_dim
    p_embed = spec.input_dim * d + d
    p_hidden = d * d + d
    p_full = p_embed + (spec.num_blocks - 1) * p_hidden
    p_trunk = p_embed + (spec.decomposition_index - 1) * p_hidden
    p_suffix = (spec.num_blocks - spec.decomposition_index) * p_hidden
    if strategy == "single":
        return p_full + d * total_classes
    if strategy == "full_expand":
        return task_count * p_full + task_count * d * total_classes
    return p_trunk + task_count * p_suffix + task_count * d * total_classes


def frozen_copy(model: ExpandableModel) -> ExpandableModel:
    """Deep copy with every parameter detached; used as a distillation teacher."""
    twin = ExpandableModel.__new__(ExpandableModel)
    twin.strategy = model.strategy
    twin.spec = model.spec
    twin.classifier_init = model.classifier_init
    twin.n_classes = model.n_classes
    twin.trunk = None
    twin.aux_classifier = None

    def copy_backbone(state: BackboneState) -> BackboneState:
        blocks = [DenseBlock(blk.w.clone(requires_grad=False), blk.b.clone(requires_grad=False))
                  for blk in state.blocks]
        copied = BackboneState(blocks, state.creation_stage)
        for src, dst in zip(state.blocks, copied.blocks):
            dst.frozen = src.frozen
        return copied

    if model.trunk is not None:
        twin.trunk = copy_backbone(model.trunk)
    twin.branches = [copy_backbone(br) for br in model.branches]
    twin.classifier = model.classifier.clone(requires_grad=False)
    return twin
