"""Portable seeded randomness.

Every shuffle in cellseg (dataset splits, per-epoch batch order) is a
Fisher-Yates shuffle driven by SplitMix64, so that the same seed yields the
same permutation in any language that implements the two algorithms:

* SplitMix64 (Steele, Lea, Flood 2014): ``state += 0x9E3779B97F4A7C15``; the
  output is ``state`` passed through ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
  z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31`` (all mod 2**64).
* Bounded draws in ``[0, n)`` use rejection sampling: draws ``>= 2**64 -
  (2**64 mod n)`` are discarded and the survivor is reduced ``mod n``.
* Fisher-Yates runs ``i`` from ``n-1`` down to ``1``, swapping ``i`` with a
  bounded draw in ``[0, i]``.

Sub-seeds come from :func:`derive_seed`. Bulk floating-point streams
(weight init, image noise) use numpy's PCG64 seeded with such a sub-seed.
"""

from __future__ import annotations

from typing import Sequence, TypeVar

import numpy as np

T = TypeVar("T")

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        return _mix(self.state)

    def bounded(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` without modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next()
            if x < limit:
                return x % n


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 64-bit sub-seed for ``keys`` (non-negative integers).

    One key ``k`` maps ``seed`` to the ``k``-th (0-based) output of
    ``SplitMix64(seed)``, i.e. ``mix(seed + (k + 1) * 0x9E3779B97F4A7C15)``;
    several keys are applied left to right.
    """
    state = seed & _MASK
    for key in keys:
        if key < 0:
            raise ValueError("derive_seed keys must be non-negative")
        state = _mix((state + (key + 1) * _GOLDEN) & _MASK)
    return state


def permutation(n: int, seed: int) -> list[int]:
    """Fisher-Yates permutation of ``range(n)``."""
    gen = SplitMix64(seed)
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = gen.bounded(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def shuffled(items: Sequence[T], seed: int) -> list[T]:
    return [items[i] for i in permutation(len(items), seed)]


def numpy_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *keys)))
