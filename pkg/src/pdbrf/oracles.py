"""Independent reference solvers used to check the splitting code.

None of these reuse the solver iterations. The active-set oracle solves the
optimality system directly from the piecewise-affine graphs of the set-valued
parts; the grid oracle minimizes prox objectives by coordinatewise search;
the subgradient oracle runs projected subgradient descent on the primal
objective.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .blocks import BlockVector, block_combine, block_norm
from .convex import MinProblem, primal_objective
from .functions import GraphUnsupported, Sloped, SquaredDistance, Vertical, Zero, make_function
from .operators import CocoerciveOperator
from .product import OperatorBundle, resolvent_Abold

logger = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
FEASIBILITY_TOL = 1e-9
MAX_PATTERNS = 200_000


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleSolution:
    point: object  # ndarray or BlockVector
    certificate: float
    method: str  # grid | subgradient | closed_form | linear_solve

    def __post_init__(self):
        if not self.certificate >= 0:
            raise ValueError("certificate must be nonnegative")


# ---------------------------------------------------------------------------
# prox by search


def grid_prox_oracle(f_spec, gamma: float, x, resolution: float = 1e-9, max_expand: int = 40) -> np.ndarray:
    """``argmin_y f(y) + ||x - y||^2 / (2 gamma)`` by golden-section search per coordinate.

    Needs a separable function; the search window starts at
    ``x +- 10 gamma (1 + |x|)`` clipped to the domain and grows while the
    minimizer sits on an artificial edge.
    """
    if not gamma > 0 or not resolution > 0:
        raise ValueError("gamma and resolution must be positive")
    f = make_function(f_spec)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dim = x.size
    if not f.is_separable(dim):
        raise GraphUnsupported(f"{f.family} is not separable in dimension {dim}")
    dlo, dhi = f.domain_bounds(dim)
    width = 10.0 * gamma * (1.0 + np.abs(x)) + 10.0 * resolution
    lo, hi = x - width, x + width
    for _ in range(max_expand):
        a, b = np.maximum(lo, dlo), np.minimum(hi, dhi)
        y = _golden(f, gamma, x, a, b, resolution)
        stuck_lo = (y - a <= resolution) & (a > dlo)
        stuck_hi = (b - y <= resolution) & (b < dhi)
        if not np.any(stuck_lo | stuck_hi):
            return y
        span = hi - lo
        lo = np.where(stuck_lo, lo - span, lo)
        hi = np.where(stuck_hi, hi + span, hi)
    raise OracleError("prox search window kept growing; is f bounded below?")


def _golden(f, gamma, x, a, b, resolution):
    a, b = a.copy(), b.copy()

    def obj(Y):
        return f.coordinate_terms(Y[None, :])[0] + (Y - x) ** 2 / (2.0 * gamma)

    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = obj(c), obj(d)
    while np.any(b - a > 0.25 * resolution):
        left = fc < fd  # minimizer in [a, d]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        nc = np.where(left, b - GOLDEN * (b - a), d)
        nd = np.where(left, c, a + GOLDEN * (b - a))
        fnew = obj(np.where(left, nc, nd))
        fc, fd = np.where(left, fnew, fd), np.where(left, fc, fnew)
        c, d = nc, nd
        if np.all(b - a <= 1e-15 * (1.0 + np.abs(a))):
            break
    mid = 0.5 * (a + b)
    # endpoints catch minimizers pinned to a domain bound
    cands = np.stack([a, mid, b])
    vals = np.stack([obj(cands[k]) for k in range(3)])
    return cands[np.argmin(vals, axis=0), np.arange(x.size)]


# ---------------------------------------------------------------------------
# residual certificate


def kkt_residual(bundle: OperatorBundle, candidate: BlockVector, gamma_probe: float = 1.0) -> float:
    """Resolvent-based violation of the primal and dual inclusions at ``candidate``.

    Zero exactly when ``-sum L_i* v_i in -z + (A + B + Q) y`` and
    ``L_i y in r_i + (A_i + B_i + Q_i) v_i`` for every ``i``.
    """
    if not gamma_probe > 0:
        raise ValueError("gamma_probe must be positive")
    g = gamma_probe
    y, vs = candidate.primal, candidate.duals
    coupling = np.zeros_like(y)
    for b, v in zip(bundle.blocks, vs):
        coupling = coupling + b.L.adjoint(v)
    # resolvent_Abold adds +g z to the primal and -g r_i to the duals
    u = BlockVector(
        y - g * (bundle.B(y) + bundle.Q(y) + coupling),
        [v + g * (b.L(y) - b.B(v) - b.Q(v)) for b, v in zip(bundle.blocks, vs)],
        check_finite=False,
    )
    J = resolvent_Abold(bundle, g, u)
    return max(float(np.linalg.norm(a - b)) for a, b in zip(candidate.blocks(), J.blocks()))


# ---------------------------------------------------------------------------
# active-set enumeration


def _affine_part(op, dim, what):
    if getattr(op, "is_zero", False):
        return np.zeros((dim, dim)), np.zeros(dim)
    if op.matrix is None:
        raise GraphUnsupported(f"{what} ({op.name}) is not affine")
    return np.asarray(op.matrix, dtype=float), np.asarray(op.offset, dtype=float)


def _graph(A, dim, what):
    if A.graph is None:
        raise GraphUnsupported(f"{what} ({A.name}) has no graph model")
    return A.graph(dim)


def _linear_matrix(L, what):
    if L.matrix is None:
        raise GraphUnsupported(f"{what} ({L.name}) has no matrix")
    return np.asarray(L.matrix, dtype=float)


def optimality_system(bundle: OperatorBundle):
    """``0 in K u + k + a`` with ``a_j`` restricted by ``pieces[j]`` (None: ``a_j = 0``)."""
    shape = bundle.shape
    dims = [shape.dim_primal, *shape.dims_dual]
    starts = np.concatenate([[0], np.cumsum(dims)])
    N = shape.size
    K = np.zeros((N, N))
    k = np.zeros(N)
    pieces: list = []
    ops = [(bundle.A, bundle.B, bundle.Q, -bundle.z, "primal")]
    ops += [(b.A, b.B, b.Q, b.r, f"block {i}") for i, b in enumerate(bundle.blocks, 1)]
    for j, (A, B, Q, shift, what) in enumerate(ops):
        s = slice(starts[j], starts[j + 1])
        MB, cB = _affine_part(B, dims[j], f"B of {what}")
        MQ, cQ = _affine_part(Q, dims[j], f"Q of {what}")
        G = _graph(A, dims[j], f"A of {what}")
        K[s, s] += MB + MQ + G.M
        k[s] += cB + cQ + G.c + shift
        pieces.extend(G.pieces)
    x_sl = slice(0, dims[0])
    for j, b in enumerate(bundle.blocks, 1):
        s = slice(starts[j], starts[j + 1])
        L = _linear_matrix(b.L, f"L_{j}")
        K[x_sl, s] += L.T
        K[s, x_sl] -= L
    return K, k, pieces


def _solve_pattern(K, k, choice, tol):
    """Solve one pattern; returns ``(u, ok)``."""
    N = k.size
    cm = dict(choice)
    G = K.copy()
    rhs = -k.copy()
    vertical = [j for j, p in choice if isinstance(p, Vertical)]
    for j, p in choice:
        if isinstance(p, Sloped):
            G[j, j] += p.slope
            rhs[j] -= p.offset
    nv = len(vertical)
    M = np.zeros((N + nv, N + nv))
    b = np.zeros(N + nv)
    M[:N, :N] = G
    b[:N] = rhs
    for r, j in enumerate(vertical):
        M[j, N + r] = 1.0  # a_j enters row j
        M[N + r, j] = 1.0  # u_j = t0
        b[N + r] = cm[j].t0
    try:
        sol = np.linalg.solve(M, b)
    except np.linalg.LinAlgError:
        return None, False
    if not np.all(np.isfinite(sol)) or np.linalg.norm(M @ sol - b) > tol * (1.0 + np.linalg.norm(b)):
        return None, False
    u, a = sol[:N], sol[N:]
    for j, p in choice:
        if isinstance(p, Sloped):
            scale = tol * (1.0 + abs(u[j]))
            if not (p.tlo - scale <= u[j] <= p.thi + scale):
                return None, False
    for r, j in enumerate(vertical):
        p = cm[j]
        scale = tol * (1.0 + abs(a[r]))
        if not (p.alo - scale <= a[r] <= p.ahi + scale):
            return None, False
    return u, True


def active_set_oracle(
    bundle: OperatorBundle, tol: float = FEASIBILITY_TOL, max_patterns: int = MAX_PATTERNS
) -> OracleSolution:
    """Exact zero of the primal-dual inclusion for piecewise-affine data.

    Every combination of graph pieces is tried; each gives a square linear
    system whose solution is kept if it lies on the chosen pieces. Feasible
    solutions must agree, otherwise the zero is not unique and an error is
    raised.
    """
    K, k, pieces = optimality_system(bundle)
    coords = [j for j, p in enumerate(pieces) if p is not None]
    options = [pieces[j] for j in coords]
    total = math.prod(len(o) for o in options)
    if total > max_patterns:
        raise OracleError(f"{total} active-set patterns exceed the limit of {max_patterns}")
    found = None
    for combo in itertools.product(*options):
        u, ok = _solve_pattern(K, k, list(zip(coords, combo)), tol)
        if not ok:
            continue
        if found is None:
            found = u
        elif np.linalg.norm(u - found) > 1e-7 * (1.0 + np.linalg.norm(found)):
            raise OracleError("optimality system has more than one solution")
    if found is None:
        raise OracleError("no active-set pattern is feasible")
    point = BlockVector.from_flat(found, bundle.shape)
    return OracleSolution(point, kkt_residual(bundle, point), "linear_solve")


# ---------------------------------------------------------------------------
# projected subgradient


def _primal_subgradient(p: MinProblem, x):
    """One subgradient of the primal objective (minus indicator parts)."""
    g = p.f.subgradient(x) + p.h.gradient(x) - p.z
    for b in p.blocks:
        u = b.L(x) - b.r
        if isinstance(b.ell, SquaredDistance):
            w = b.ell.weight
            d = u - b.ell.center
            grad = w * (d - b.g.prox(1.0 / w, d))  # envelope gradient
        elif isinstance(b.g, Zero) and not isinstance(b.ell, CocoerciveOperator):
            grad = np.zeros_like(u)
        else:
            raise OracleError("composite term has no closed-form gradient")
        g = g + b.L.adjoint(grad)
    return g


def subgradient_oracle(
    p: MinProblem,
    iters: int = 100_000,
    step_rule: str = "sqrt",
    seed: int = 0,
    step0: float = 1.0,
    reference: Optional[float] = None,
    x0=None,
) -> OracleSolution:
    """Projected subgradient descent on the primal objective.

    ``step_rule`` is ``sqrt`` (``step0 / sqrt(k + 1)``) or ``harmonic``
    (``step0 / (k + 1)``). The certificate is the gap of the best iterate to
    ``reference`` (or to itself when no reference is known).
    """
    if primal_objective(p, np.zeros(p.z.size)) is None:
        raise OracleError("primal objective is unavailable for this problem")
    if step_rule not in ("sqrt", "harmonic"):
        raise ValueError(f"unknown step rule {step_rule!r}")
    rng = np.random.default_rng(seed)
    n = p.z.size
    x = rng.standard_normal(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    x = p.f.project_domain(x)
    best_x, best = x.copy(), primal_objective(p, x)
    for k in range(iters):
        g = _primal_subgradient(p, x)
        t = step0 / math.sqrt(k + 1.0) if step_rule == "sqrt" else step0 / (k + 1.0)
        x = p.f.project_domain(x - t * g)
        val = primal_objective(p, x)
        if val < best:
            best, best_x = val, x.copy()
    known = best if reference is None else min(reference, best)
    return OracleSolution(best_x, best - known, "subgradient")


def block_error(a: BlockVector, b: BlockVector) -> float:
    return block_norm(block_combine(1.0, a, -1.0, b))


__all__ = [
    "OracleError",
    "OracleSolution",
    "grid_prox_oracle",
    "kkt_residual",
    "optimality_system",
    "active_set_oracle",
    "subgradient_oracle",
    "block_error",
]
