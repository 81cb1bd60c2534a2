"""Operator types consumed by the splitting solvers.

Maximally monotone operators appear only through their resolvents, which take
the step size at call time. Single-valued operators carry their declared
constants (cocoercivity ``beta``, Lipschitz ``mu``); those constants are
trusted and only audited by sampling.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .functions import ConvexFunction, GraphModel, make_function

logger = logging.getLogger(__name__)

DEFAULT_NORM_INFLATION = 1.01


def _check_gamma(gamma):
    if not gamma > 0:
        raise ValueError(f"step size must be positive, got {gamma}")


@dataclass(frozen=True)
class ResolventOperator:
    """``(gamma, x) -> J_{gamma A} x`` for a maximally monotone ``A``.

    ``graph`` optionally returns a piecewise-affine model of ``A`` (used by
    the active-set oracle, never by the solvers).
    """

    resolvent: Callable[[float, np.ndarray], np.ndarray]
    domain_dim: Optional[int] = None
    name: str = "A"
    graph: Optional[Callable[[int], GraphModel]] = None
    function: Optional[ConvexFunction] = None

    def __call__(self, gamma: float, x) -> np.ndarray:
        _check_gamma(gamma)
        return self.resolvent(gamma, np.asarray(x, dtype=float))


@dataclass(frozen=True)
class CocoerciveOperator:
    """Single-valued ``beta``-cocoercive map, optionally affine ``x -> M x + c``."""

    apply: Callable[[np.ndarray], np.ndarray]
    beta: float
    name: str = "B"
    matrix: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None
    is_zero: bool = False

    def __call__(self, x) -> np.ndarray:
        return self.apply(x)

    @classmethod
    def zero(cls, name="B"):
        # the zero map is beta-cocoercive for every beta
        return cls(lambda x: np.zeros_like(x), math.inf, name=name, is_zero=True)

    @classmethod
    def affine(cls, M, c=None, beta=None, name="B"):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        c = np.zeros(M.shape[0]) if c is None else np.asarray(c, dtype=float).reshape(-1)
        if beta is None:
            beta = linear_cocoercivity(M)
        return cls(lambda x: M @ x + c, float(beta), name=name, matrix=M, offset=c)


@dataclass(frozen=True)
class LipschitzMonotoneOperator:
    """Single-valued monotone ``mu``-Lipschitz map, optionally affine."""

    apply: Callable[[np.ndarray], np.ndarray]
    mu: float
    name: str = "Q"
    matrix: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None
    is_zero: bool = False

    def __call__(self, x) -> np.ndarray:
        return self.apply(x)

    @classmethod
    def zero(cls, name="Q"):
        return cls(lambda x: np.zeros_like(x), 0.0, name=name, is_zero=True)

    @classmethod
    def affine(cls, M, c=None, mu=None, name="Q"):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        c = np.zeros(M.shape[0]) if c is None else np.asarray(c, dtype=float).reshape(-1)
        if mu is None:
            mu = float(np.linalg.norm(M, 2))
        return cls(lambda x: M @ x + c, float(mu), name=name, matrix=M, offset=c)


def linear_cocoercivity(M: np.ndarray, iters: int = 200) -> float:
    """Largest beta with ``<x, Mx> >= beta ||Mx||^2`` for all x.

    Found by bisection on the smallest eigenvalue of ``sym(M) - beta M^T M``.
    Returns 0 when M is not monotone and ``inf`` when M is zero.
    """
    M = np.asarray(M, dtype=float)
    if not np.any(M):
        return math.inf
    sym = 0.5 * (M + M.T)
    gram = M.T @ M
    sym_norm, gram_norm = np.linalg.norm(sym, 2), np.linalg.norm(gram, 2)

    def ok(b):
        return np.linalg.eigvalsh(sym - b * gram)[0] >= -1e-12 * (sym_norm + b * gram_norm)

    if not ok(0.0):
        return 0.0
    hi = 1.0
    while ok(hi):
        hi *= 2.0
        if hi > 1e15:
            return hi
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    # the eigenvalue test has a little slack; step back so beta is never overstated
    return lo * (1.0 - 1e-9)


@dataclass(frozen=True)
class LinearMap:
    """Bounded linear map ``H -> G`` with its adjoint."""

    apply: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    shape: tuple[int, int]  # (dim G, dim H)
    norm_bound: Optional[float] = None
    matrix: Optional[np.ndarray] = field(default=None, repr=False)
    name: str = "L"

    def __call__(self, x) -> np.ndarray:
        return self.apply(x)

    @classmethod
    def from_matrix(cls, A, norm_bound=None, name="L"):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        At = A.T.copy()
        return cls(lambda x: A @ x, lambda u: At @ u, A.shape, norm_bound, A, name)

    @classmethod
    def diagonal(cls, d, name="L"):
        d = np.asarray(d, dtype=float).reshape(-1)
        n = d.size
        return cls(lambda x: d * x, lambda u: d * u, (n, n), float(np.max(np.abs(d))) if n else 0.0, np.diag(d), name)

    @classmethod
    def identity(cls, n, name="L"):
        return cls(lambda x: np.array(x, dtype=float), lambda u: np.array(u, dtype=float), (n, n), 1.0, np.eye(n), name)

    @classmethod
    def zero(cls, n_out, n_in, name="L"):
        return cls(
            lambda x: np.zeros(n_out), lambda u: np.zeros(n_in), (n_out, n_in), 0.0, np.zeros((n_out, n_in)), name
        )

    def compose(self, inner: "LinearMap") -> "LinearMap":
        """``self o inner``."""
        if inner.shape[0] != self.shape[1]:
            raise ValueError(f"cannot compose {self.shape} after {inner.shape}")
        outer = self
        nb = None
        if outer.norm_bound is not None and inner.norm_bound is not None:
            nb = outer.norm_bound * inner.norm_bound
        mat = None
        if outer.matrix is not None and inner.matrix is not None:
            mat = outer.matrix @ inner.matrix
        return LinearMap(
            lambda x: outer.apply(inner.apply(x)),
            lambda u: inner.adjoint(outer.adjoint(u)),
            (outer.shape[0], inner.shape[1]),
            nb,
            mat,
            f"{outer.name}*{inner.name}",
        )

    def with_norm_bound(self, bound: float) -> "LinearMap":
        return LinearMap(self.apply, self.adjoint, self.shape, float(bound), self.matrix, self.name)


# ---------------------------------------------------------------------------
# prox calculus


def prox_factory(spec) -> ResolventOperator:
    """Resolvent of ``df`` for a registered function, i.e. ``prox_{gamma f}``."""
    f = make_function(spec)
    return ResolventOperator(f.prox, getattr(f, "dim", None), name=f"prox[{f.family}]", graph=f.graph, function=f)


def conjugate_prox(base: ResolventOperator) -> ResolventOperator:
    """Resolvent of ``df*`` from the prox of ``f`` via the Moreau decomposition.

    ``prox_{gamma f*}(x) = x - gamma * prox_{f/gamma}(x / gamma)``
    """
    prox = base.resolvent

    def resolvent(gamma, x):
        _check_gamma(gamma)
        return x - gamma * prox(1.0 / gamma, x / gamma)

    graph = None
    if base.graph is not None:
        graph = lambda dim: base.graph(dim).inverse()  # noqa: E731
    return ResolventOperator(resolvent, base.domain_dim, name=f"conj[{base.name}]", graph=graph)


@dataclass
class NormEstimate:
    value: float
    converged: bool
    iterations: int

    def __float__(self):
        return float(self.value)


def estimate_operator_norm(L: LinearMap, tol: float = 1e-8, max_iter: int = 10_000, seed: int = 0) -> NormEstimate:
    """Power iteration on ``L* L`` from a seeded Gaussian start."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(L.shape[1])
    x /= np.linalg.norm(x)
    prev = None
    for k in range(1, max_iter + 1):
        Lx = L.apply(x)
        y = L.adjoint(Lx)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return NormEstimate(0.0, True, k)
        rayleigh = float(np.dot(Lx, Lx))  # ||L x||^2 with ||x|| = 1
        x = y / ny
        if prev is not None and abs(rayleigh - prev) <= tol * rayleigh:
            return NormEstimate(math.sqrt(rayleigh), True, k)
        prev = rayleigh
    logger.warning("power iteration did not converge after %d iterations", max_iter)
    return NormEstimate(math.sqrt(prev or 0.0), False, max_iter)


def ensure_norm_bound(L: LinearMap, inflation: float = DEFAULT_NORM_INFLATION, seed: int = 0, tol: float = 1e-10) -> LinearMap:
    """Return ``L`` with a norm bound, estimating and inflating one if missing."""
    if L.norm_bound is not None:
        return L
    est = estimate_operator_norm(L, tol=tol, seed=seed)
    return L.with_norm_bound(inflation * est.value)


# ---------------------------------------------------------------------------
# sampled audits


@dataclass
class MonotonicityReport:
    monotone_slack: float
    cocoercive_slack: Optional[float] = None
    lipschitz_slack: Optional[float] = None
    worst_pair: Optional[tuple] = None

    @property
    def ok(self) -> bool:
        tol = -1e-10
        slacks = [self.monotone_slack, self.cocoercive_slack, self.lipschitz_slack]
        return all(s is None or s >= tol for s in slacks)


def sample_monotonicity_check(op, pairs: Sequence[tuple]) -> MonotonicityReport:
    """Worst slack of the defining inequalities of ``op`` over sampled pairs.

    Slacks are normalized by ``||x - y||^2`` so they are comparable across
    scales; a negative value is a violation.
    """
    worst_mono = math.inf
    worst_coco = math.inf if isinstance(op, CocoerciveOperator) else None
    worst_lip = math.inf if isinstance(op, LipschitzMonotoneOperator) else None
    worst_pair = None
    for x, y in pairs:
        x, y = np.asarray(x, float), np.asarray(y, float)
        dx = x - y
        scale = float(np.dot(dx, dx)) or 1.0
        du = op(x) - op(y)
        inner = float(np.dot(dx, du))
        mono = inner / scale
        if mono < worst_mono:
            worst_mono = mono
            worst_pair = (x, y)
        if worst_coco is not None and math.isfinite(op.beta):
            worst_coco = min(worst_coco, (inner - op.beta * float(np.dot(du, du))) / scale)
        if worst_lip is not None:
            worst_lip = min(worst_lip, (op.mu**2 * scale - float(np.dot(du, du))) / scale)
    if worst_coco == math.inf:
        worst_coco = 0.0 if worst_coco is not None else None
    return MonotonicityReport(worst_mono, worst_coco, worst_lip, worst_pair)


def firm_nonexpansive_slack(J: Callable[[np.ndarray], np.ndarray], pairs: Sequence[tuple]) -> float:
    """``min <x-y, Jx-Jy> - ||Jx-Jy||^2`` over pairs (nonnegative when firm)."""
    worst = math.inf
    for x, y in pairs:
        d = J(x) - J(y)
        worst = min(worst, float(np.dot(np.asarray(x) - np.asarray(y), d) - np.dot(d, d)))
    return worst


def adjoint_mismatch(L: LinearMap, pairs: Sequence[tuple]) -> float:
    """Largest ``|<Lx, u> - <x, L*u>|`` over pairs ``(x, u)``."""
    return max(abs(float(np.dot(L.apply(x), u) - np.dot(x, L.adjoint(u)))) for x, u in pairs)
