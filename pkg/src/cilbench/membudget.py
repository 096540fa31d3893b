"""Byte-exact memory accounting and budget alignment.

Model cost is parameters times bytes-per-parameter (4 by convention: the
storage cost model assumes float32 checkpoints regardless of the in-memory
precision used for training). Exemplar cost is instances times
bytes-per-exemplar (one byte per stored value for image-style data, e.g.
3072 for 32x32 RGB). A megabyte is 2**20 bytes.

Alignment converts spare model budget into whole exemplars, never
over-spending: conversions floor.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

MEGABYTE = 1 << 20


@dataclass(frozen=True)
class BudgetLedger:
    """Immutable snapshot of what a run is storing."""

    model_param_count: int
    exemplar_count: int
    bytes_per_param: int = 4
    bytes_per_exemplar: int = 3072

    def __post_init__(self):
        if self.model_param_count < 0 or self.exemplar_count < 0:
            raise ValueError("counts must be non-negative")
        if self.bytes_per_param < 1 or self.bytes_per_exemplar < 1:
            raise ValueError("byte sizes must be at least 1")

    @property
    def model_bytes(self) -> int:
        return self.model_param_count * self.bytes_per_param

    @property
    def exemplar_bytes(self) -> int:
        return self.exemplar_count * self.bytes_per_exemplar

    @property
    def total_bytes(self) -> int:
        return self.model_bytes + self.exemplar_bytes


def exemplar_equivalent(param_count: int, bytes_per_param: int, bytes_per_exemplar: int) -> int:
    """How many whole exemplars the given parameter storage is worth."""
    if param_count < 1 or bytes_per_param < 1 or bytes_per_exemplar < 1:
        raise ValueError("inputs must be positive")
    return (param_count * bytes_per_param) // bytes_per_exemplar


def exact_megabytes(byte_count: int) -> float:
    """Bytes -> MB (2**20) at full precision; curve coordinates use this."""
    return byte_count / MEGABYTE


def megabytes(byte_count: int) -> float:
    """Bytes -> MB (2**20), reported to 2 decimals (half-up)."""
    mb = Decimal(byte_count) / Decimal(MEGABYTE)
    return float(mb.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def total_megabytes(ledger: BudgetLedger) -> float:
    return megabytes(ledger.total_bytes)


def align_budget(target_total_bytes: int, model_bytes: int, bytes_per_exemplar: int,
                 base_exemplars: int) -> int:
    """Exemplar count that fills ``target_total_bytes`` alongside the model.

    Starts from ``base_exemplars`` and adds one exemplar per whole
    ``bytes_per_exemplar`` of slack. Raises if the target cannot even cover
    the model plus the base exemplars.
    """
    if bytes_per_exemplar < 1:
        raise ValueError("bytes_per_exemplar must be at least 1")
    floor_bytes = model_bytes + base_exemplars * bytes_per_exemplar
    if target_total_bytes < floor_bytes:
        raise ValueError(
            f"budget below method floor: target {target_total_bytes} B < "
            f"model {model_bytes} B + base exemplars {base_exemplars * bytes_per_exemplar} B"
        )
    return base_exemplars + (target_total_bytes - floor_bytes) // bytes_per_exemplar


def model_ratio(ledger: BudgetLedger) -> float:
    """Fraction of the total budget spent on the model, in [0, 1]."""
    if ledger.total_bytes == 0:
        raise ValueError("ledger is empty")
    return ledger.model_bytes / ledger.total_bytes
