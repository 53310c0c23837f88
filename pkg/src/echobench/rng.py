"""Deterministic pseudo-random number generation.

A 64-bit seed is expanded by splitmix64 into the 256-bit state of a
xoshiro256** generator. Both algorithms are fixed-width integer recurrences,
so a given seed reproduces the same stream on every platform and Python
build. Bulk draws hand blocks of raw 64-bit words to numpy for the float and
normal transforms; the word stream itself is always consumed in order.

A generator instance is single-owner: share one between components only by
deriving child seeds with :func:`derive_seed` and giving each component its
own ``Rng``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidInputError

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_TWO_PI = 2.0 * math.pi
# 2**-53, the spacing of doubles in [1, 2); top 53 bits of a word map to [0, 1).
_U53_SCALE = 1.0 / (1 << 53)


def _splitmix_scramble(z: int) -> int:
    """Output function of splitmix64 (a 64-bit bijective mix)."""
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def derive_seed(base: int, *components: int) -> int:
    """Fold integer components into a base seed, giving a new 64-bit seed.

    Used to carve independent, reproducible child streams out of one run
    seed: ``derive_seed(seed, kind_tag, index, ...)``. Each component is
    absorbed through one splitmix64 scramble, so distinct component tuples
    give unrelated seeds.
    """
    acc = base & _MASK64
    for value in components:
        acc = _splitmix_scramble((acc + _GOLDEN + (value & _MASK64)) & _MASK64)
    return acc


class Rng:
    """xoshiro256** generator seeded via splitmix64.

    Args:
        seed: any Python int; only the low 64 bits matter.
    """

    __slots__ = ("_s0", "_s1", "_s2", "_s3")

    def __init__(self, seed: int):
        x = seed & _MASK64
        state = []
        for _ in range(4):
            x = (x + _GOLDEN) & _MASK64
            state.append(_splitmix_scramble(x))
        if not any(state):
            state[0] = 1  # the all-zero state is a fixed point of xoshiro
        self._s0, self._s1, self._s2, self._s3 = state

    def next_u64(self) -> int:
        """Return the next raw 64-bit word."""
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        x = (s1 * 5) & _MASK64
        result = ((x << 7 | x >> 57) & _MASK64) * 9 & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = (s3 << 45 | s3 >> 19) & _MASK64
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def _words(self, n: int) -> np.ndarray:
        """Draw n raw words as a uint64 array."""
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        out = [0] * n
        for i in range(n):
            x = (s1 * 5) & _MASK64
            out[i] = ((x << 7 | x >> 57) & _MASK64) * 9 & _MASK64
            t = (s1 << 17) & _MASK64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = (s3 << 45 | s3 >> 19) & _MASK64
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return np.array(out, dtype=np.uint64)

    def next_float(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits of one word."""
        return (self.next_u64() >> 11) * _U53_SCALE

    def floats(self, n: int) -> np.ndarray:
        """n uniform doubles in [0, 1)."""
        if n < 0:
            raise InvalidInputError(f"draw count must be >= 0, got {n}")
        return ((self._words(n) >> np.uint64(11))).astype(np.float64) * _U53_SCALE

    def normals(self, n: int) -> np.ndarray:
        """n standard normal doubles via Box-Muller on paired words.

        Consumes 2 * ceil(n / 2) words: first the log-half block, then the
        angle-half block.
        """
        if n < 0:
            raise InvalidInputError(f"draw count must be >= 0, got {n}")
        if n == 0:
            return np.zeros(0)
        m = (n + 1) // 2
        words = self._words(2 * m)
        # u1 lies in (0, 1] so the log is finite; u2 lies in [0, 1).
        u1 = ((words[:m] >> np.uint64(11)).astype(np.float64) + 1.0) * _U53_SCALE
        u2 = (words[m:] >> np.uint64(11)).astype(np.float64) * _U53_SCALE
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = _TWO_PI * u2
        pairs = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
        return pairs[:n]

    def standard_normal(self, shape: tuple[int, ...]) -> np.ndarray:
        """Standard normal array of the given shape (row-major fill order)."""
        count = 1
        for dim in shape:
            count *= dim
        return self.normals(count).reshape(shape)

    def next_uint(self, bound: int) -> int:
        """Uniform integer in [0, bound) by 128-bit multiply-shift."""
        if bound <= 0:
            raise InvalidInputError(f"bound must be positive, got {bound}")
        return (self.next_u64() * bound) >> 64

    def poisson(self, lam: float) -> int:
        """Poisson draw by product-of-uniforms; suitable for small rates."""
        if not (lam >= 0.0 and math.isfinite(lam)):
            raise InvalidInputError(f"poisson rate must be finite and >= 0, got {lam}")
        if lam == 0.0:
            return 0
        threshold = math.exp(-lam)
        k = 0
        p = 1.0
        while True:
            p *= self.next_float()
            if p <= threshold:
                return k
            k += 1

    def shuffle(self, items: list) -> None:
        """Fisher-Yates shuffle of a list, in place."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_uint(i + 1)
            items[i], items[j] = items[j], items[i]

    def split(self) -> "Rng":
        """Return a new generator seeded from the next word of this one."""
        return Rng(self.next_u64())
