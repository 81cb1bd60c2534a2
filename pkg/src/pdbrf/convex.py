"""Structured convex minimization on top of the primal-dual solver.

Primal:  min_x  f(x) + sum_i (g_i box l_i)(L_i x - r_i) + h(x) - <z, x>
Dual:    min_v  (f* box h*)(z - sum_i L_i* v_i) + sum_i g_i*(v_i) + l_i*(v_i) + <v_i, r_i>

The inclusion data are ``A = df``, ``B = grad h``, ``A_i = dg_i*``,
``B_i = grad l_i*`` with both ``Q`` terms zero, so each iteration is

    y_n       = prox_{gamma f}(x_n + gamma z)
    w_{i,n}   = prox_{gamma g_i*}(v_{i,n} - gamma r_i)
    x_{n+1}   = y_n - gamma sum_i L_i*(2 w_{i,n} - w_{i,n-1}) - gamma B_n y_n
    v_{i,n+1} = w_{i,n} + gamma L_i(2 y_n - y_{n-1}) - gamma B_{i,n} w_{i,n}

``h`` and ``l_i`` are either registered smooth functions (objectives then
evaluable) or bare cocoercive maps (objectives unavailable).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .blocks import BlockVector
from .functions import SMOOTH_FAMILIES, AffineQuadratic, ConvexFunction, SquaredDistance, Zero, make_function
from .inexact import PerturbationSchedule
from .operators import (
    CocoerciveOperator,
    LinearMap,
    LipschitzMonotoneOperator,
    ResolventOperator,
    conjugate_prox,
)
from .product import OperatorBundle, make_bundle
from .solver import RunResult, Seeds, StepPolicy, StopRule, run


class MinProblemError(ValueError):
    pass


Smooth = Union[ConvexFunction, CocoerciveOperator]


@dataclass(frozen=True)
class MinBlock:
    """One composite term ``(g box l)(L x - r)``; ``ell`` is ``l`` or ``grad l*``."""

    g: ConvexFunction
    ell: Smooth
    L: LinearMap
    r: np.ndarray


@dataclass(frozen=True)
class MinProblem:
    f: ConvexFunction
    h: Smooth
    z: np.ndarray
    blocks: tuple[MinBlock, ...]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float).reshape(-1))
        blocks = []
        for b in self.blocks:
            r = np.asarray(b.r, dtype=float).reshape(-1)
            blocks.append(MinBlock(make_function(b.g), _smooth(b.ell), b.L, r))
        object.__setattr__(self, "f", make_function(self.f))
        object.__setattr__(self, "h", _smooth(self.h))
        object.__setattr__(self, "blocks", tuple(blocks))
        if not self.blocks:
            raise MinProblemError("at least one composite term is required")

    @property
    def m(self):
        return len(self.blocks)


def _smooth(obj) -> Smooth:
    if isinstance(obj, CocoerciveOperator):
        return obj
    fn = make_function(obj)
    if fn.family not in SMOOTH_FAMILIES:
        raise MinProblemError(f"smooth term must be one of {SMOOTH_FAMILIES}, got {fn.family!r}")
    return fn


def _gradient_operator(h: Smooth, dim: int, name: str) -> CocoerciveOperator:
    """``grad h`` with cocoercivity ``1 / Lip(grad h)``."""
    if isinstance(h, CocoerciveOperator):
        return h
    lip = h.gradient_lipschitz()
    if lip == 0.0:
        return CocoerciveOperator.zero(name)
    beta = 1.0 / lip
    if isinstance(h, SquaredDistance):
        c = np.broadcast_to(h.center, (dim,)).astype(float)
        return CocoerciveOperator(h.gradient, beta, name, matrix=h.weight * np.eye(dim), offset=-h.weight * c)
    if isinstance(h, AffineQuadratic):
        return CocoerciveOperator(h.gradient, beta, name, matrix=h.P, offset=h.b)
    raise MinProblemError(f"no gradient for {h.family!r}")


def _conjugate_gradient_operator(ell: Smooth, dim: int, name: str) -> CocoerciveOperator:
    """``grad l*``, cocoercive with the strong-convexity modulus of ``l``."""
    if isinstance(ell, CocoerciveOperator):
        return ell
    beta = ell.strong_convexity()
    if not beta > 0:
        raise MinProblemError(f"{name}: l must be strongly convex, {ell.family!r} has modulus {beta}")
    if isinstance(ell, SquaredDistance):
        c = np.broadcast_to(ell.center, (dim,)).astype(float)
        return CocoerciveOperator(ell.conjugate_gradient, beta, name, matrix=np.eye(dim) / ell.weight, offset=c)
    if isinstance(ell, AffineQuadratic):
        Pinv = np.linalg.inv(ell.P)
        return CocoerciveOperator(ell.conjugate_gradient, beta, name, matrix=Pinv, offset=-Pinv @ ell.b)
    raise MinProblemError(f"no conjugate gradient for {ell.family!r}")


def _prox_resolvent(fn: ConvexFunction) -> ResolventOperator:
    return ResolventOperator(fn.prox, name=f"prox[{fn.family}]", graph=fn.graph, function=fn)


def build_inclusion(p: MinProblem) -> OperatorBundle:
    blocks = []
    for i, b in enumerate(p.blocks, 1):
        blocks.append(
            (
                conjugate_prox(_prox_resolvent(b.g)),
                _conjugate_gradient_operator(b.ell, b.r.size, f"B_{i}"),
                LipschitzMonotoneOperator.zero(f"Q_{i}"),
                b.L,
                b.r,
            )
        )
    bundle = make_bundle(
        _prox_resolvent(p.f), _gradient_operator(p.h, p.z.size, "B"), LipschitzMonotoneOperator.zero("Q"), p.z, blocks
    )
    return bundle


@dataclass
class MinResult:
    primal: np.ndarray
    duals: list
    history: list
    status: str
    run: RunResult


def solve_min(
    p: MinProblem,
    policy: StepPolicy,
    seeds: Seeds = Seeds(),
    stop: StopRule = StopRule(),
    perturbation: Optional[PerturbationSchedule] = None,
    keep_iterates: bool = False,
) -> MinResult:
    bundle = build_inclusion(p).with_norm_bounds()
    res = run(bundle, perturbation, policy, seeds, stop, keep_iterates=keep_iterates)
    return MinResult(res.solution.primal.copy(), [d.copy() for d in res.solution.duals], res.history, res.status, res)


# ---------------------------------------------------------------------------
# objectives


def _inf_conv_value(g: ConvexFunction, ell: Smooth, u: np.ndarray) -> Optional[float]:
    """``(g box l)(u)`` in closed form, or None."""
    if isinstance(ell, CocoerciveOperator):
        return None
    if isinstance(ell, SquaredDistance) and ell.weight > 0:
        # inf_y g(y) + (w/2)||u - c - y||^2 is a Moreau envelope
        w = ell.weight
        d = u - ell.center
        y = g.prox(1.0 / w, d)
        return g.value(y) + 0.5 * w * float(np.sum((d - y) ** 2))
    if isinstance(g, Zero):
        return -ell.conjugate_value(np.zeros_like(u))
    return None


def _conj_sum_value(f: ConvexFunction, h: Smooth, u: np.ndarray) -> Optional[float]:
    """``(f* box h*)(u) = (f + h)*(u)`` in closed form, or None."""
    if isinstance(h, CocoerciveOperator):
        return None
    if isinstance(h, Zero):
        return f.conjugate_value(u)
    if isinstance(f, Zero):
        return h.conjugate_value(u)
    if isinstance(h, SquaredDistance) and h.weight > 0:
        # maximizer of <u, x> - f(x) - (w/2)||x - c||^2
        w = h.weight
        x = f.prox(1.0 / w, h.center + u / w)
        return float(np.dot(u, x)) - f.value(x) - h.value(x)
    return None


def primal_objective(p: MinProblem, x) -> Optional[float]:
    """Primal value at ``x``, or None when an infimal convolution has no closed form."""
    x = np.asarray(x, dtype=float)
    total = p.f.value(x)
    if isinstance(p.h, CocoerciveOperator):
        return None
    total += p.h.value(x) - float(np.dot(p.z, x))
    for b in p.blocks:
        val = _inf_conv_value(b.g, b.ell, b.L(x) - b.r)
        if val is None:
            return None
        total += val
    return float(total)


def dual_objective(p: MinProblem, v: Sequence) -> Optional[float]:
    """Dual value at ``(v_1, ..., v_m)``, or None outside the closed-form cases."""
    if len(v) != p.m:
        raise MinProblemError(f"expected {p.m} dual blocks, got {len(v)}")
    v = [np.asarray(vi, dtype=float) for vi in v]
    u = p.z.copy()
    for b, vi in zip(p.blocks, v):
        u = u - b.L.adjoint(vi)
    total = _conj_sum_value(p.f, p.h, u)
    if total is None:
        return None
    for b, vi in zip(p.blocks, v):
        if isinstance(b.ell, CocoerciveOperator):
            return None
        total += b.g.conjugate_value(vi) + b.ell.conjugate_value(vi) + float(np.dot(vi, b.r))
    return float(total)


def duality_gap(p: MinProblem, x, v) -> Optional[float]:
    """``primal(x) + dual(v)``; nonnegative, zero exactly at a primal-dual solution pair."""
    a, b = primal_objective(p, x), dual_objective(p, v)
    if a is None or b is None:
        return None
    if math.isinf(a) or math.isinf(b):
        return math.inf
    return a + b


def solution_as_block(result: MinResult) -> BlockVector:
    return BlockVector(result.primal, result.duals)
