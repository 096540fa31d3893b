"""Deterministic pseudo-randomness for every stochastic choice in the package.

A single splitmix64 generator drives weight init, class-order shuffling,
mini-batch shuffling and synthetic data sampling, so identical seeds give
bitwise-identical runs on every platform. Substreams are derived by drawing
one 64-bit value from the parent generator (``spawn_seed``) at a fixed,
documented call order.
"""

from __future__ import annotations

import math

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64_next(state: int) -> tuple[int, int]:
    """One raw splitmix64 step: returns (value, new_state)."""
    state = (state + _GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return (z ^ (z >> 31)), state


class SplitMix64:
    """Stateful wrapper around :func:`splitmix64_next`."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        value, self.state = splitmix64_next(self.state)
        return value

    def spawn_seed(self) -> int:
        """Derive a sub-seed; consumes exactly one draw from this stream."""
        return self.next_u64()

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0**-53)

    def next_uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.next_float()

    def next_gaussian(self) -> float:
        """Standard normal via Box-Muller (cosine branch only).

        Using only one branch keeps the draw count per variate fixed, which
        makes downstream call-order documentation trivial.
        """
        u1 = self.next_float()
        while u1 == 0.0:
            u1 = self.next_float()
        u2 = self.next_float()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle, high index downward."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]


def shuffle_class_order(n_classes: int, seed: int) -> list[int]:
    """Deterministic permutation of 0..n_classes-1 used to order the stream."""
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    perm = list(range(n_classes))
    SplitMix64(seed).shuffle(perm)
    return perm
