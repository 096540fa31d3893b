"""Budget arithmetic: conversions, MB reporting, alignment, reference rows."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from cilbench.membudget import (BudgetLedger, align_budget, exemplar_equivalent,
                                megabytes, model_ratio, total_megabytes)

from budget_rows import BYTES_PER_CIFAR_IMAGE, CIFAR_ROWS, RESNET32, listed_tolerance


def test_exemplar_equivalent_reference_values():
    assert exemplar_equivalent(463_504, 4, 3072) == 603
    assert exemplar_equivalent(11_176_512, 4, 150_528) == 296  # published text rounds to ~297
    assert exemplar_equivalent(768, 4, 3072) == 1


def test_exemplar_equivalent_monotone_in_params():
    prev = 0
    for params in range(1, 20_000, 37):
        now = exemplar_equivalent(params, 4, 3072)
        assert now >= prev
        prev = now


@given(st.integers(1, 10**8), st.integers(1, 16), st.integers(1, 10**6))
def test_exemplar_equivalent_never_overspends(params, bpp, bpe):
    count = exemplar_equivalent(params, bpp, bpe)
    assert count * bpe <= params * bpp < (count + 1) * bpe


def test_total_megabytes_reference_values():
    model = BudgetLedger(463_504, 0, 4, 3072)
    assert total_megabytes(model) == pytest.approx(1.77, abs=0.005)
    exemplars = BudgetLedger(0, 2000, 4, 3072)
    assert total_megabytes(exemplars) == pytest.approx(5.86, abs=0.005)
    assert total_megabytes(BudgetLedger(0, 0, 4, 3072)) == 0.0


def test_ledger_total_is_exact_integer_arithmetic():
    ledger = BudgetLedger(463_504, 2000, 4, 3072)
    assert ledger.total_bytes == 463_504 * 4 + 2000 * 3072
    assert ledger.model_bytes == 1_854_016


def test_ledger_validation():
    with pytest.raises(ValueError):
        BudgetLedger(-1, 0)
    with pytest.raises(ValueError):
        BudgetLedger(0, 0, bytes_per_param=0)


def test_align_budget_reference_endpoint():
    target = 10 * RESNET32 * 4 + 2000 * BYTES_PER_CIFAR_IMAGE
    got = align_budget(target, RESNET32 * 4, BYTES_PER_CIFAR_IMAGE, 2000)
    assert got == 7431


def test_align_budget_floor_and_slack():
    model_bytes = 1000
    bpe = 16
    base = 5
    floor = model_bytes + base * bpe
    assert align_budget(floor, model_bytes, bpe, base) == base
    assert align_budget(floor + bpe, model_bytes, bpe, base) == base + 1
    assert align_budget(floor + bpe - 1, model_bytes, bpe, base) == base
    with pytest.raises(ValueError, match="below method floor"):
        align_budget(floor - 1, model_bytes, bpe, base)


@given(st.integers(0, 10**7), st.integers(0, 10**4), st.integers(1, 5000))
def test_align_budget_round_trips_own_ledger(params, exemplars, bpe):
    ledger = BudgetLedger(params, exemplars, 4, bpe)
    assert align_budget(ledger.total_bytes, ledger.model_bytes, bpe, exemplars) == exemplars


@given(st.integers(0, 10**6), st.integers(1, 4096), st.integers(0, 10**6))
def test_align_budget_monotone_in_target(model_bytes, bpe, slack):
    base = 0
    floor = model_bytes
    a = align_budget(floor + slack, model_bytes, bpe, base)
    b = align_budget(floor + slack + bpe, model_bytes, bpe, base)
    assert b >= a


def test_model_ratio_extremes_and_example():
    assert model_ratio(BudgetLedger(100, 0, 4, 3072)) == 1.0
    assert model_ratio(BudgetLedger(0, 10, 4, 3072)) == 0.0
    # ~1.76 MB model of a ~7.6 MB total
    ledger = BudgetLedger(463_504, 2000, 4, 3072)
    assert model_ratio(ledger) == pytest.approx(0.232, abs=0.005)
    with pytest.raises(ValueError):
        model_ratio(BudgetLedger(0, 0))


def test_megabytes_uses_binary_mebibytes():
    assert megabytes(6_144_000) == pytest.approx(5.86, abs=0.005)  # not 6.14 (10^6)


def test_reference_budget_rows_reproduce():
    """Every reference row's S(E) and model-size columns, at printed precision."""
    for setting, method, exemplars, listed_se, params, listed_model in CIFAR_ROWS:
        se_mb = exemplars * BYTES_PER_CIFAR_IMAGE / (1 << 20)
        model_mb = params * 4 / (1 << 20)
        assert se_mb == pytest.approx(float(listed_se), abs=listed_tolerance(listed_se)), \
            f"{setting}/{method}: S(E) {se_mb:.4f} vs listed {listed_se}"
        assert model_mb == pytest.approx(float(listed_model), abs=listed_tolerance(listed_model)), \
            f"{setting}/{method}: model {model_mb:.4f} vs listed {listed_model}"


def test_reference_rows_two_decimal_cells_within_005():
    two_dec = [r for r in CIFAR_ROWS if listed_tolerance(r[3]) == 0.05]
    assert len(two_dec) >= 20
    for setting, method, exemplars, listed_se, params, listed_model in two_dec:
        se_mb = exemplars * BYTES_PER_CIFAR_IMAGE / (1 << 20)
        assert abs(se_mb - float(listed_se)) < 0.05
