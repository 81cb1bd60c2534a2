"""Inexact evaluations of the single-valued operators.

Block ``i`` (0 is primal) at iteration ``n`` is perturbed as

    B_{i,n} = B_i + kappa_{i,n} * R_i,   Q_{i,n} = Q_i + kappa_{i,n} * R'_i

with ``R_i`` 1-Lipschitz and vanishing at an anchor, so the difference is
``kappa_{i,n}``-Lipschitz and the perturbed map agrees with the exact one at
the anchor for every ``n``. Schedules are closed-form so that summability of
``kappa_{i,n}`` can be certified rather than estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .blocks import BlockVector
from .operators import CocoerciveOperator, LipschitzMonotoneOperator
from .product import OperatorBundle


class ScheduleError(ValueError):
    pass


@dataclass
class PerturbationSchedule:
    """Base schedule; subclasses define ``kappa(i, n)``.

    ``anchors_B[i]`` / ``anchors_Q[i]`` are the points ``c_i`` / ``d_i``;
    ``None`` means the origin. ``shapes_B`` / ``shapes_Q`` override the
    default perturbation direction ``x -> x - anchor``.
    """

    m: int
    anchors_B: Optional[Sequence] = None
    anchors_Q: Optional[Sequence] = None
    shapes_B: Optional[Sequence[Optional[Callable]]] = None
    shapes_Q: Optional[Sequence[Optional[Callable]]] = None
    targets: tuple[str, ...] = ("B", "Q")

    def kappa(self, i: int, n: int) -> float:
        raise NotImplementedError

    def sup(self) -> float:
        raise ScheduleError(f"{type(self).__name__} has no certifiable supremum")

    def summability(self) -> Optional[str]:
        """A short certificate that ``sum_n kappa_{i,n} < inf``, or None."""
        return None

    def anchor(self, kind: str, i: int, dim: int) -> np.ndarray:
        anchors = self.anchors_B if kind == "B" else self.anchors_Q
        if anchors is None or anchors[i] is None:
            return np.zeros(dim)
        a = np.asarray(anchors[i], dtype=float).reshape(-1)
        if a.size != dim:
            raise ScheduleError(f"anchor {kind}[{i}] has dimension {a.size}, block has {dim}")
        return a

    def shape(self, kind: str, i: int, dim: int) -> Callable[[np.ndarray], np.ndarray]:
        shapes = self.shapes_B if kind == "B" else self.shapes_Q
        anchor = self.anchor(kind, i, dim)
        if shapes is not None and shapes[i] is not None:
            return shapes[i]
        return lambda x: x - anchor


@dataclass
class ZeroSchedule(PerturbationSchedule):
    def kappa(self, i, n):
        return 0.0

    def sup(self):
        return 0.0

    def summability(self):
        return "identically zero"


@dataclass
class GeometricSchedule(PerturbationSchedule):
    """``kappa_{i,n} = kappas[i] * rho**n`` with ``0 <= rho < 1``."""

    kappas: Sequence[float] = ()
    rho: float = 0.5

    def __post_init__(self):
        self.kappas = [float(k) for k in self.kappas]
        if len(self.kappas) != self.m + 1:
            raise ScheduleError(f"need {self.m + 1} block kappas, got {len(self.kappas)}")
        if any(k < 0 for k in self.kappas):
            raise ScheduleError("kappas must be nonnegative")
        if not 0.0 <= self.rho < 1.0:
            raise ScheduleError(f"geometric ratio must lie in [0, 1), got {self.rho}")

    @classmethod
    def from_aggregate(cls, m, aggregate, rho, weights=None, **kw):
        """Split an aggregate ``kappa_0`` across blocks in proportion to ``weights``."""
        w = np.ones(m + 1) if weights is None else np.asarray(weights, dtype=float)
        w = w / np.linalg.norm(w)
        return cls(m=m, kappas=list(aggregate * w), rho=rho, **kw)

    def kappa(self, i, n):
        return self.kappas[i] * self.rho**n

    def sup(self):
        return math.sqrt(sum(k * k for k in self.kappas))

    def summability(self):
        return f"geometric, ratio {self.rho} < 1: sum = {sum(self.kappas) / (1 - self.rho):.6g}"


@dataclass
class FiniteSchedule(PerturbationSchedule):
    """``kappa_{i,n} = table[i][n]`` for ``n < len(table[i])``, zero afterwards."""

    table: Sequence[Sequence[float]] = ()

    def __post_init__(self):
        self.table = [[float(v) for v in row] for row in self.table]
        if len(self.table) != self.m + 1:
            raise ScheduleError(f"need {self.m + 1} rows, got {len(self.table)}")
        if any(v < 0 for row in self.table for v in row):
            raise ScheduleError("kappas must be nonnegative")

    def kappa(self, i, n):
        row = self.table[i]
        return row[n] if n < len(row) else 0.0

    def sup(self):
        horizon = max((len(r) for r in self.table), default=0)
        return max((kappa_aggregate(self, n) for n in range(horizon)), default=0.0)

    def summability(self):
        return "finite support"


@dataclass
class CallableSchedule(PerturbationSchedule):
    """Arbitrary ``fn(i, n)``; usable by the solver but not certifiable."""

    fn: Callable[[int, int], float] = field(default=lambda i, n: 0.0)

    def kappa(self, i, n):
        return float(self.fn(i, n))


def kappa_aggregate(schedule: PerturbationSchedule, n: int) -> float:
    if n < 0:
        raise ValueError("iteration index must be nonnegative")
    return math.sqrt(sum(schedule.kappa(i, n) ** 2 for i in range(schedule.m + 1)))


def kappa_sup(schedule: Optional[PerturbationSchedule]) -> float:
    if schedule is None:
        return 0.0
    return schedule.sup()


def _perturb_B(op: CocoerciveOperator, k: float, R) -> CocoerciveOperator:
    base = op.apply
    return CocoerciveOperator(lambda x: base(x) + k * R(x), op.beta, name=f"{op.name}~")


def _perturb_Q(op: LipschitzMonotoneOperator, k: float, R) -> LipschitzMonotoneOperator:
    base = op.apply
    return LipschitzMonotoneOperator(lambda x: base(x) + k * R(x), op.mu + k, name=f"{op.name}~")


def perturb(bundle: OperatorBundle, schedule: Optional[PerturbationSchedule], n: int) -> OperatorBundle:
    """Bundle with the iteration-``n`` operators; untouched blocks keep identity."""
    if schedule is None:
        return bundle
    if schedule.m != bundle.m:
        raise ScheduleError(f"schedule is for m={schedule.m}, bundle has m={bundle.m}")
    dims = [bundle.z.size, *(b.r.size for b in bundle.blocks)]
    ops_B = [bundle.B, *(b.B for b in bundle.blocks)]
    ops_Q = [bundle.Q, *(b.Q for b in bundle.blocks)]
    for i in range(bundle.m + 1):
        k = schedule.kappa(i, n)
        if k == 0.0:
            continue
        if "B" in schedule.targets:
            ops_B[i] = _perturb_B(ops_B[i], k, schedule.shape("B", i, dims[i]))
        if "Q" in schedule.targets:
            ops_Q[i] = _perturb_Q(ops_Q[i], k, schedule.shape("Q", i, dims[i]))
    blocks = tuple(replace(b, B=ops_B[i + 1], Q=ops_Q[i + 1]) for i, b in enumerate(bundle.blocks))
    return replace(bundle, B=ops_B[0], Q=ops_Q[0], blocks=blocks)


@dataclass
class ConditionReport:
    worst_lipschitz_slack: float
    worst_anchor_error: float
    violations: list
    summability: Optional[str]

    @property
    def ok(self) -> bool:
        return not self.violations and self.summability is not None


def audit_condition(
    schedule: PerturbationSchedule,
    bundle: OperatorBundle,
    samples: Sequence[tuple[BlockVector, BlockVector]],
    ns: Sequence[int] = range(20),
    atol: float = 1e-12,
) -> ConditionReport:
    """Check the Lipschitz and anchor requirements on sampled pairs.

    A violation is recorded as ``(kind, block, n, x, y, excess)``; anchor
    mismatches use ``x = y = anchor``.
    """
    dims = [bundle.z.size, *(b.r.size for b in bundle.blocks)]
    base_B = [bundle.B, *(b.B for b in bundle.blocks)]
    base_Q = [bundle.Q, *(b.Q for b in bundle.blocks)]
    worst_slack = math.inf
    worst_anchor = 0.0
    violations = []
    for n in ns:
        pb = perturb(bundle, schedule, n)
        pert = {"B": [pb.B, *(b.B for b in pb.blocks)], "Q": [pb.Q, *(b.Q for b in pb.blocks)]}
        base = {"B": base_B, "Q": base_Q}
        for kind in schedule.targets:
            for i in range(bundle.m + 1):
                k = schedule.kappa(i, n)
                new, old = pert[kind][i], base[kind][i]
                for u, v in samples:
                    x, y = u.blocks()[i], v.blocks()[i]
                    diff = (new(x) - old(x)) - (new(y) - old(y))
                    slack = k * float(np.linalg.norm(x - y)) - float(np.linalg.norm(diff))
                    worst_slack = min(worst_slack, slack)
                    if slack < -atol:
                        violations.append((kind, i, n, x, y, -slack))
                a = schedule.anchor(kind, i, dims[i])
                err = float(np.linalg.norm(new(a) - old(a)))
                worst_anchor = max(worst_anchor, err)
                if err > atol:
                    violations.append((f"anchor-{kind}", i, n, a, a, err))
    return ConditionReport(worst_slack, worst_anchor, violations, schedule.summability())
