"""Problem data and the product-space operators built from it.

On ``K = H + G_1 + ... + G_m`` the primal-dual pair becomes one inclusion
``0 in A(u) + S(u) + B(u)`` with

* ``S(x, v) = (Q x + sum_i L_i* v_i, Q_1 v_1 - L_1 x, ..., Q_m v_m - L_m x)``
* ``B(x, v) = (B x, B_1 v_1, ..., B_m v_m)``
* ``J_{gamma A}(x, v) = (J_{gamma A}(x + gamma z), J_{gamma A_i}(v_i - gamma r_i))``

The shifts ``z`` and ``r_i`` live in the resolvent rather than in ``A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .blocks import BlockVector, ShapeError, SpaceShape
from .operators import (
    CocoerciveOperator,
    LinearMap,
    LipschitzMonotoneOperator,
    ResolventOperator,
    ensure_norm_bound,
)


class BundleError(ValueError):
    pass


@dataclass(frozen=True)
class DualBlock:
    A: ResolventOperator
    B: CocoerciveOperator
    Q: LipschitzMonotoneOperator
    L: LinearMap
    r: np.ndarray


@dataclass(frozen=True)
class OperatorBundle:
    """Data of the primal-dual inclusion: primal operators plus ``m`` dual blocks."""

    A: ResolventOperator
    B: CocoerciveOperator
    Q: LipschitzMonotoneOperator
    z: np.ndarray
    blocks: tuple[DualBlock, ...]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).reshape(-1)
        object.__setattr__(self, "z", z)
        blocks = tuple(replace(b, r=np.asarray(b.r, dtype=float).reshape(-1)) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if not blocks:
            raise BundleError("at least one dual block is required (m >= 1)")
        for i, b in enumerate(blocks, 1):
            if b.L.shape != (b.r.size, z.size):
                raise BundleError(f"L_{i} has shape {b.L.shape}, expected {(b.r.size, z.size)}")
        bounds = [b.L.norm_bound for b in blocks]
        if all(nb is not None for nb in bounds) and sum(nb**2 for nb in bounds) == 0.0:
            raise BundleError("the linear operators must not all vanish (sum ||L_i||^2 > 0)")

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def shape(self) -> SpaceShape:
        return SpaceShape(self.z.size, tuple(b.r.size for b in self.blocks))

    def with_norm_bounds(self, seed: int = 0) -> "OperatorBundle":
        """Fill in missing ``||L_i||`` bounds by inflated power iteration."""
        blocks = tuple(replace(b, L=ensure_norm_bound(b.L, seed=seed + i)) for i, b in enumerate(self.blocks))
        return replace(self, blocks=blocks)


def _check(bundle: OperatorBundle, u: BlockVector):
    if u.shape != bundle.shape:
        raise ShapeError(f"vector layout {u.shape} does not match bundle layout {bundle.shape}")


def assemble_S(bundle: OperatorBundle) -> Callable[[BlockVector], BlockVector]:
    def S(u: BlockVector) -> BlockVector:
        _check(bundle, u)
        x = u.primal
        primal = bundle.Q(x)
        for b, v in zip(bundle.blocks, u.duals):  # fixed index order
            primal = primal + b.L.adjoint(v)
        duals = [b.Q(v) - b.L(x) for b, v in zip(bundle.blocks, u.duals)]
        return BlockVector(primal, duals, check_finite=False)

    return S


def assemble_B(bundle: OperatorBundle) -> Callable[[BlockVector], BlockVector]:
    def Bb(u: BlockVector) -> BlockVector:
        _check(bundle, u)
        return BlockVector(bundle.B(u.primal), [b.B(v) for b, v in zip(bundle.blocks, u.duals)], check_finite=False)

    return Bb


def beta_prime(bundle: OperatorBundle) -> float:
    """Cocoercivity of the stacked map: the smallest declared beta."""
    return min([bundle.B.beta, *(b.B.beta for b in bundle.blocks)])


def resolvent_Abold(bundle: OperatorBundle, gamma: float, xb: BlockVector) -> BlockVector:
    if not gamma > 0:
        raise ValueError(f"step size must be positive, got {gamma}")
    _check(bundle, xb)
    primal = bundle.A(gamma, xb.primal + gamma * bundle.z)
    duals = [b.A(gamma, v - gamma * b.r) for b, v in zip(bundle.blocks, xb.duals)]
    return BlockVector(primal, duals, check_finite=False)


def lipschitz_mu(bundle: OperatorBundle) -> float:
    """``sqrt(sum ||L_i||^2) + max(mu_0, ..., mu_m)`` from the declared bounds."""
    bounds = [b.L.norm_bound for b in bundle.blocks]
    if any(nb is None for nb in bounds):
        missing = [i for i, nb in enumerate(bounds, 1) if nb is None]
        raise BundleError(f"no norm bound for L_{missing}; call with_norm_bounds() first")
    mus = [bundle.Q.mu, *(b.Q.mu for b in bundle.blocks)]
    return math.sqrt(sum(nb**2 for nb in bounds)) + max(mus)


@dataclass(frozen=True)
class ProductOperators:
    S: Callable[[BlockVector], BlockVector]
    Bbold: Callable[[BlockVector], BlockVector]
    resolvent_Abold: Callable[[float, BlockVector], BlockVector]
    mu: float
    beta_prime: float


def product_operators(bundle: OperatorBundle) -> ProductOperators:
    return ProductOperators(
        S=assemble_S(bundle),
        Bbold=assemble_B(bundle),
        resolvent_Abold=lambda gamma, xb: resolvent_Abold(bundle, gamma, xb),
        mu=lipschitz_mu(bundle),
        beta_prime=beta_prime(bundle),
    )


def make_bundle(A, B, Q, z, blocks: Sequence[tuple]) -> OperatorBundle:
    """Convenience constructor; ``blocks`` holds ``(A_i, B_i, Q_i, L_i, r_i)`` tuples."""
    return OperatorBundle(A, B, Q, np.asarray(z, dtype=float), tuple(DualBlock(*blk) for blk in blocks))
