"""Gradient-norm, shift and CKA probe correctness."""

from __future__ import annotations

import math
from array import array

import numpy as np
import pytest

from cilbench.diffcore import Tensor, backward, softmax_cross_entropy, sum_elements, zero_grads
from cilbench.netblocks import (BackboneSpec, BackboneState, DenseBlock,
                                ExpandableModel, expand_for_task)
from cilbench.probes import (ProbeTrace, block_shift_mse, cka_matrix,
                             grad_norm_per_block, linear_cka, mean_offdiagonal,
                             snapshot_blocks)
from cilbench.prng import SplitMix64

from conftest import finite_difference_gradients


def _one_block_model(w_value: float) -> ExpandableModel:
    """Hand-built single-block model for closed-form gradient checks."""
    model = ExpandableModel.__new__(ExpandableModel)
    model.strategy = "single"
    model.spec = BackboneSpec(1, 1, 2)  # only input_dim is consulted here
    model.classifier_init = "random"
    model.n_classes = 1
    model.trunk = None
    w = Tensor.from_rows([[w_value]], requires_grad=True, name="stage1.block0.w")
    b = Tensor([0.0], (1,), requires_grad=True, name="stage1.block0.b")
    model.branches = [BackboneState([DenseBlock(w, b)], 1)]
    model.classifier = Tensor.zeros((1, 1))
    model.aux_classifier = None
    return model


def test_grad_norm_hand_value():
    # y = relu(w*x + b), w=1, b=0, x=3: dL/dw = 3, dL/db = 1 -> norm sqrt(10)
    model = _one_block_model(1.0)
    batch = Tensor.from_rows([[3.0]])

    def loss_fn(m, xb):
        return sum_elements(m.branches[0].forward(xb))

    norms = grad_norm_per_block(model, batch, loss_fn)
    assert norms["stage1.0"] == pytest.approx(math.sqrt(10.0), abs=1e-12)


def test_grad_norm_frozen_block_reports_zero():
    model = ExpandableModel("full_expand", BackboneSpec(4, 6, 2), n_classes=2, seed=7)
    expand_for_task(model, 2, seed=8)
    rng = SplitMix64(3)
    batch = Tensor([rng.next_uniform(-1, 1) for _ in range(5 * 4)], (5, 4))

    def loss_fn(m, xb):
        return softmax_cross_entropy(m.logits(xb), [0, 1, 2, 3, 0])

    norms = grad_norm_per_block(model, batch, loss_fn)
    assert norms["stage1.0"] == 0.0
    assert norms["stage1.1"] == 0.0
    assert norms["stage2.0"] > 0.0


def test_grad_norm_matches_finite_differences():
    model = ExpandableModel("single", BackboneSpec(3, 4, 2), n_classes=3, seed=15)
    rng = SplitMix64(9)
    batch = Tensor([rng.next_uniform(-1, 1) for _ in range(6 * 3)], (6, 3))
    labels = [0, 1, 2, 0, 1, 2]

    def loss_fn(m, xb):
        return softmax_cross_entropy(m.logits(xb), labels)

    norms = grad_norm_per_block(model, batch, loss_fn)
    fd = finite_difference_gradients(lambda: loss_fn(model, batch).item(),
                                     model.backbone_params())
    per_block_fd = {}
    params = model.backbone_params()
    labels_map = model.block_map()
    i = 0
    for label, block in labels_map:
        s = 0.0
        for _ in block.params():
            s += sum(g * g for g in fd[i])
            i += 1
        per_block_fd[label] = math.sqrt(s)
    for label in norms:
        assert norms[label] == pytest.approx(per_block_fd[label], rel=1e-6)


def test_grad_norm_additivity_over_blocks():
    model = ExpandableModel("single", BackboneSpec(3, 5, 3), n_classes=3, seed=4)
    rng = SplitMix64(10)
    batch = Tensor([rng.next_uniform(-1, 1) for _ in range(8 * 3)], (8, 3))
    labels = [0, 1, 2] * 2 + [0, 1]
    zero_grads(model.all_params())
    loss = softmax_cross_entropy(model.logits(batch), labels)
    backward(loss)
    whole = 0.0
    for p in model.backbone_params():
        whole += sum(g * g for g in p.grad)
    from cilbench.probes import _block_grad_norms
    norms = _block_grad_norms(model)
    assert sum(v * v for v in norms.values()) == pytest.approx(whole, rel=1e-12)


def test_block_shift_mse_examples():
    a = {"blk": [array("d", [0.0] * 10)]}
    b = {"blk": [array("d", [0.0] * 10)]}
    assert block_shift_mse(a, b)["blk"] == 0.0
    c = {"blk": [array("d", [0.1] * 10)]}
    assert block_shift_mse(a, c)["blk"] == pytest.approx(0.01)
    d = {"blk": [array("d", [0.0, 0.0])]}
    e = {"blk": [array("d", [0.1, -0.3])]}
    assert block_shift_mse(d, e)["blk"] == pytest.approx(0.05)


def test_block_shift_mse_shape_mismatch():
    with pytest.raises(ValueError):
        block_shift_mse({"a": [array("d", [0.0])]}, {"b": [array("d", [0.0])]})
    with pytest.raises(ValueError):
        block_shift_mse({"a": [array("d", [0.0])]}, {"a": [array("d", [0.0, 1.0])]})


def test_snapshots_feed_shift(snapshot_model=None):
    model = ExpandableModel("single", BackboneSpec(3, 4, 2), n_classes=2, seed=2)
    before = snapshot_blocks(model)
    model.branches[0].blocks[0].w.data[0] += 0.5
    after = snapshot_blocks(model)
    mse = block_shift_mse(before, after)
    assert mse["stage1.0"] > 0.0
    assert mse["stage1.1"] == 0.0


# ---------------------------------------------------------------------------
# CKA
# ---------------------------------------------------------------------------


def _rand_features(rng, n, d, scale=1.0):
    return Tensor([rng.next_uniform(-scale, scale) for _ in range(n * d)], (n, d))


def test_cka_self_is_one():
    x = _rand_features(SplitMix64(1), 12, 5)
    assert linear_cka(x, x) == pytest.approx(1.0, abs=1e-12)


def test_cka_isotropic_scale_invariance():
    x = _rand_features(SplitMix64(2), 10, 4)
    doubled = Tensor([2.0 * v for v in x.data], x.shape)
    assert linear_cka(x, doubled) == pytest.approx(1.0, abs=1e-12)


def test_cka_hand_orthogonal_zero():
    x = Tensor.from_rows([[1.0], [-1.0], [0.0], [0.0]])
    y = Tensor.from_rows([[0.0], [0.0], [1.0], [-1.0]])
    assert linear_cka(x, y) == 0.0


def test_cka_constant_features_define_zero():
    x = Tensor.from_rows([[1.0], [1.0], [1.0]])
    y = _rand_features(SplitMix64(3), 3, 2)
    assert linear_cka(x, y) == 0.0


def test_cka_needs_two_rows():
    with pytest.raises(ValueError):
        linear_cka(Tensor.from_rows([[1.0]]), Tensor.from_rows([[2.0]]))


def test_cka_orthogonal_rotation_invariance():
    rs = np.random.RandomState(0)
    x = rs.randn(20, 6)
    y = rs.randn(20, 4)
    q, _ = np.linalg.qr(rs.randn(6, 6))
    xt = Tensor(list(x.ravel()), (20, 6))
    yt = Tensor(list(y.ravel()), (20, 4))
    xq = Tensor(list((x @ q).ravel()), (20, 6))
    assert linear_cka(xq, yt) == pytest.approx(linear_cka(xt, yt), abs=1e-9)
    assert linear_cka(xt, xq) == pytest.approx(1.0, abs=1e-9)


def test_cka_matches_numpy_reference():
    rs = np.random.RandomState(7)
    x = rs.randn(15, 5)
    y = rs.randn(15, 3)
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    num = np.linalg.norm(yc.T @ xc, "fro") ** 2
    den = np.linalg.norm(xc.T @ xc, "fro") * np.linalg.norm(yc.T @ yc, "fro")
    expect = num / den
    got = linear_cka(Tensor(list(x.ravel()), (15, 5)), Tensor(list(y.ravel()), (15, 3)))
    assert got == pytest.approx(expect, rel=1e-10)
    assert 0.0 <= got <= 1.0 + 1e-9


def test_cka_matrix_identical_backbones():
    from cilbench.netblocks import build
    spec = BackboneSpec(4, 6, 3)
    a = build(spec, seed=5)
    b = build(spec, seed=5)
    rng = SplitMix64(6)
    batch = Tensor([rng.next_uniform(-1, 1) for _ in range(10 * 4)], (10, 4))
    for depth in ("shallow", "deep"):
        mat = cka_matrix([a, b], depth, batch)
        assert mat[0][0] == pytest.approx(1.0, abs=1e-9)
        assert mat[1][1] == pytest.approx(1.0, abs=1e-9)
        assert mat[0][1] == pytest.approx(1.0, abs=1e-9)
        assert abs(mat[0][1] - mat[1][0]) < 1e-12


def test_cka_matrix_validation():
    from cilbench.netblocks import build
    spec = BackboneSpec(4, 6, 3)
    a = build(spec, seed=5)
    batch = Tensor([0.0] * 8, (2, 4))
    with pytest.raises(ValueError):
        cka_matrix([a], "deep", batch)
    with pytest.raises(ValueError):
        cka_matrix([a, a], "middle", batch)


def test_mean_offdiagonal():
    assert mean_offdiagonal([[1.0, 0.5], [0.5, 1.0]]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        mean_offdiagonal([[1.0]])


def test_probe_trace_round_trips_through_dict():
    trace = ProbeTrace()
    trace.record_step_norms(1, {"a": 1.0, "b": 2.0})
    trace.record_step_norms(1, {"a": 3.0, "b": 4.0})
    trace.shift_mse[1] = {"a": 0.1}
    trace.cka_shallow = [[1.0, 0.9], [0.9, 1.0]]
    back = ProbeTrace.from_dict(trace.to_dict())
    assert back.mean_grad_norms(1) == {"a": 2.0, "b": 3.0}
    assert back.shift_mse[1] == {"a": 0.1}
    assert back.cka_shallow == trace.cka_shallow
