"""Deterministic PRNG used by every stochastic component.

The generator is splitmix64: the 64-bit state advances by the additive
constant 0x9E3779B97F4A7C15 per draw and the post-increment state is mixed
with two xorshift-multiply rounds (constants 0xBF58476D1CE4E5B9 and
0x94D049BB133111EB). Because each output depends only on the counter value,
blocks of draws vectorize over numpy uint64 arrays while producing the same
stream as one-at-a-time draws.

Gaussians come from Box-Muller on two successive uniforms in (0,1]: the
cosine branch is returned first and the sine branch is cached for the next
draw. The cache is part of the stream contract; identical seeds give
identical draw sequences regardless of how calls are batched.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO64 = float(2.0 ** 64)


def _mix(counters: np.ndarray) -> np.ndarray:
    z = counters
    z = z ^ (z >> np.uint64(30))
    z = z * _MIX1
    z = z ^ (z >> np.uint64(27))
    z = z * _MIX2
    z = z ^ (z >> np.uint64(31))
    return z


class Rng:
    """Seeded splitmix64 stream with uniform, integer, and Gaussian draws."""

    def __init__(self, seed: int):
        self._state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._gauss_cache: float | None = None

    def _next_block(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * _GAMMA
            counters = self._state + steps
            self._state = counters[-1] if n > 0 else self._state
            return _mix(counters)

    def next_u64(self) -> int:
        return int(self._next_block(1)[0])

    def uniform(self) -> float:
        """One uniform draw in (0, 1]."""
        return float(self._uniform_block(1)[0])

    def _uniform_block(self, n: int) -> np.ndarray:
        z = self._next_block(n).astype(np.float64)
        return (z + 1.0) / _TWO64

    def uniform_array(self, shape) -> np.ndarray:
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        out = self._uniform_block(n).reshape(shape)
        return out

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection-free modular reduction."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        return self.next_u64() % n

    def randint_array(self, count: int, bound: int) -> np.ndarray:
        if bound <= 0:
            raise ValueError("randint bound must be positive")
        return (self._next_block(count) % np.uint64(bound)).astype(np.int64)

    def choice(self, weights) -> int:
        """Categorical draw over an unnormalized weight vector."""
        w = np.asarray(weights, dtype=np.float64)
        total = float(w.sum())
        if total <= 0.0:
            raise ValueError("choice needs positive total weight")
        u = self.uniform() * total
        return int(np.searchsorted(np.cumsum(w), u, side="left").clip(0, len(w) - 1))

    def gauss(self) -> float:
        return float(self.normal(1)[0])

    def normal(self, shape) -> np.ndarray:
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=np.float64)
        k = 0
        if self._gauss_cache is not None and n > 0:
            out[0] = self._gauss_cache
            self._gauss_cache = None
            k = 1
        m = n - k
        if m > 0:
            pairs = (m + 1) // 2
            u = self._uniform_block(2 * pairs).reshape(pairs, 2)
            r = np.sqrt(-2.0 * np.log(u[:, 0]))
            theta = 2.0 * np.pi * u[:, 1]
            cos_branch = r * np.cos(theta)
            sin_branch = r * np.sin(theta)
            interleaved = np.empty(2 * pairs, dtype=np.float64)
            interleaved[0::2] = cos_branch
            interleaved[1::2] = sin_branch
            out[k:] = interleaved[:m]
            if m % 2 == 1:
                self._gauss_cache = float(interleaved[m])
        return out.reshape(shape)

    def shuffle(self, items: list) -> list:
        """Fisher-Yates shuffle, in place; returns the list for chaining."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def spawn_seed(self) -> int:
        """Derive a child seed; children are independent streams by counter position."""
        return self.next_u64()


def _as_shape(shape) -> tuple:
    if isinstance(shape, int):
        return (shape,)
    return tuple(shape)
