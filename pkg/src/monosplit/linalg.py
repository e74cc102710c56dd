"""Vector arithmetic on R^n and on direct sums of Euclidean blocks.

Dense points are plain 1-D ``float64`` numpy arrays. A :class:`BlockVector`
groups several of them into a point of the product space, whose scalar
product is the sum of the blockwise scalar products.

Inner products are accumulated with :func:`math.fsum`, so the result is the
correctly rounded value of the exact sum. That makes it independent of the
summation order, and a block vector has exactly the same inner product and
norm as its flattened counterpart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np


class ShapeError(ValueError):
    """Raised when two vectors that must share a shape do not."""


def as_vector(x) -> np.ndarray:
    """Coerce ``x`` to a finite, non-empty 1-D float64 array (copying)."""
    arr = np.array(x, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ShapeError("vectors must have dimension >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite coordinates")
    return arr


@dataclass(frozen=True)
class BlockVector:
    """A point ``(x, v_1, ..., v_m)`` of a Hilbert direct sum."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(as_vector(b) for b in self.blocks)
        if not blocks:
            raise ShapeError("a block vector needs at least one block")
        for b in blocks:
            b.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_flat(cls, flat, block_dims: Sequence[int]) -> "BlockVector":
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        if sum(block_dims) != flat.size or any(d < 1 for d in block_dims):
            raise ShapeError(f"cannot split length {flat.size} into blocks {list(block_dims)}")
        cuts = np.cumsum(block_dims)[:-1]
        return cls(tuple(np.split(flat, cuts)))

    @property
    def block_dims(self) -> tuple:
        return tuple(b.size for b in self.blocks)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.blocks)

    def __array__(self, dtype=None, copy=None):
        out = self.flat()
        return out if dtype is None else out.astype(dtype)

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]


Vector = Union[np.ndarray, BlockVector]


def _check_same(a: Vector, b: Vector) -> None:
    if isinstance(a, BlockVector) or isinstance(b, BlockVector):
        if not (isinstance(a, BlockVector) and isinstance(b, BlockVector)):
            raise ShapeError("cannot combine a block vector with a dense vector")
        if a.block_dims != b.block_dims:
            raise ShapeError(f"block dims differ: {a.block_dims} vs {b.block_dims}")
    elif np.shape(a) != np.shape(b):
        raise ShapeError(f"shapes differ: {np.shape(a)} vs {np.shape(b)}")


def _products(a: Vector, b: Vector) -> Iterable[float]:
    if isinstance(a, BlockVector):
        for ab, bb in zip(a.blocks, b.blocks):
            yield from (ab * bb).tolist()
    else:
        yield from (np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64)).tolist()


def inner(a: Vector, b: Vector) -> float:
    """Scalar product; for block vectors, the sum over all blocks."""
    _check_same(a, b)
    return math.fsum(_products(a, b))


def norm(a: Vector) -> float:
    return math.sqrt(inner(a, a))


def axpy(alpha: float, x: Vector, y: Vector) -> Vector:
    """Return ``alpha * x + y``."""
    _check_same(x, y)
    if isinstance(x, BlockVector):
        return BlockVector(tuple(alpha * xb + yb for xb, yb in zip(x.blocks, y.blocks)))
    return alpha * np.asarray(x, dtype=np.float64) + np.asarray(y, dtype=np.float64)


def reflect(x_cur: Vector, x_prev: Vector) -> Vector:
    """The extrapolated point ``2 x_cur - x_prev``."""
    _check_same(x_cur, x_prev)
    if isinstance(x_cur, BlockVector):
        return BlockVector(tuple(2.0 * c - p for c, p in zip(x_cur.blocks, x_prev.blocks)))
    return 2.0 * np.asarray(x_cur, dtype=np.float64) - np.asarray(x_prev, dtype=np.float64)
