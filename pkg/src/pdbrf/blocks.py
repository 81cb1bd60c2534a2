"""Vectors in the direct sum H + G_1 + ... + G_m.

A :class:`BlockVector` keeps one contiguous array per block. The first block
is the primal variable, the remaining ``m`` blocks are the dual variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when block layouts do not match."""


@dataclass(frozen=True)
class SpaceShape:
    dim_primal: int
    dims_dual: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims_dual", tuple(int(d) for d in self.dims_dual))
        if len(self.dims_dual) < 1:
            raise ShapeError("at least one dual block is required")
        if self.dim_primal < 1 or any(d < 1 for d in self.dims_dual):
            raise ShapeError(f"all block dimensions must be >= 1, got {self}")

    @property
    def m(self) -> int:
        return len(self.dims_dual)

    @property
    def size(self) -> int:
        return self.dim_primal + sum(self.dims_dual)

    def zeros(self) -> "BlockVector":
        return BlockVector(np.zeros(self.dim_primal), [np.zeros(d) for d in self.dims_dual])


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


class BlockVector:
    """Immutable element of the product space.

    Entries must be finite unless ``check_finite=False`` is passed; the solver
    uses the unchecked path so that divergence can be reported instead of
    raised at construction time.
    """

    __slots__ = ("primal", "duals")

    def __init__(self, primal, duals: Sequence, check_finite: bool = True):
        p = _frozen(primal)
        ds = tuple(_frozen(d) for d in duals)
        if check_finite and not (np.all(np.isfinite(p)) and all(np.all(np.isfinite(d)) for d in ds)):
            raise ValueError("BlockVector entries must be finite")
        object.__setattr__(self, "primal", p)
        object.__setattr__(self, "duals", ds)

    def __setattr__(self, name, value):
        raise AttributeError("BlockVector is immutable")

    @property
    def shape(self) -> SpaceShape:
        return SpaceShape(self.primal.size, tuple(d.size for d in self.duals))

    @property
    def m(self) -> int:
        return len(self.duals)

    def blocks(self) -> tuple[np.ndarray, ...]:
        return (self.primal, *self.duals)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(b)) for b in self.blocks())

    def flatten(self) -> np.ndarray:
        return np.concatenate(self.blocks())

    @classmethod
    def from_flat(cls, flat, shape: SpaceShape, check_finite: bool = True) -> "BlockVector":
        flat = np.asarray(flat, dtype=float).reshape(-1)
        if flat.size != shape.size:
            raise ShapeError(f"flat vector of length {flat.size} does not fit {shape}")
        cuts = np.cumsum([shape.dim_primal, *shape.dims_dual])[:-1]
        parts = np.split(flat, cuts)
        return cls(parts[0], parts[1:], check_finite=check_finite)

    def __add__(self, other: "BlockVector") -> "BlockVector":
        return block_combine(1.0, self, 1.0, other)

    def __sub__(self, other: "BlockVector") -> "BlockVector":
        return block_combine(1.0, self, -1.0, other)

    def __mul__(self, alpha: float) -> "BlockVector":
        return BlockVector(alpha * self.primal, [alpha * d for d in self.duals], check_finite=False)

    __rmul__ = __mul__

    def __repr__(self):
        duals = ", ".join(np.array2string(d, precision=6) for d in self.duals)
        return f"BlockVector({np.array2string(self.primal, precision=6)}; {duals})"


def _check_same(u: BlockVector, v: BlockVector):
    if len(u.duals) != len(v.duals) or u.primal.size != v.primal.size or any(
        a.size != b.size for a, b in zip(u.duals, v.duals)
    ):
        raise ShapeError(f"block layouts differ: {u.shape} vs {v.shape}")


def block_dot(u: BlockVector, v: BlockVector) -> float:
    _check_same(u, v)
    total = float(np.dot(u.primal, v.primal))
    for a, b in zip(u.duals, v.duals):
        total += float(np.dot(a, b))
    return total


def block_norm(u: BlockVector) -> float:
    return float(np.sqrt(max(block_dot(u, u), 0.0)))


def block_combine(alpha: float, u: BlockVector, beta: float, v: BlockVector) -> BlockVector:
    """Blockwise ``alpha * u + beta * v``."""
    _check_same(u, v)
    return BlockVector(
        alpha * u.primal + beta * v.primal,
        [alpha * a + beta * b for a, b in zip(u.duals, v.duals)],
        check_finite=False,
    )
