"""Frozen sign random projections, the stand-in for a pretrained image encoder.

Entries are drawn i.i.d. from {+1/sqrt(out_dim), -1/sqrt(out_dim)} with the
package RNG, so the matrix is reproducible from its seed and (in
expectation) preserves pairwise distances of the projected frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng


@dataclass(frozen=True)
class Projection:
    seed: int
    matrix: np.ndarray  # (in_dim, out_dim), immutable by convention

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.matrix


def random_projection(rng_seed: int, in_dim: int, out_dim: int) -> Projection:
    if out_dim < 1:
        raise ValueError("out_dim must be >= 1")
    rng = Rng(rng_seed)
    u = rng.uniform_array((in_dim, out_dim))
    signs = np.where(u <= 0.5, 1.0, -1.0)
    mat = signs / np.sqrt(out_dim)
    mat.setflags(write=False)
    return Projection(seed=rng_seed, matrix=mat)
