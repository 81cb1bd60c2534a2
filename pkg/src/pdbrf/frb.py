"""Forward-reflected-backward iteration for a single inclusion ``0 in A + B + Q``.

    y_n     = J_{gamma A} x_n
    x_{n+1} = y_n - gamma (2 Q y_n - Q y_{n-1}) - gamma B y_n

Converges for ``0 < gamma < 2 beta / (1 + 4 beta mu)``. Stacking the dual
blocks of a primal-dual bundle gives a single inclusion on flat vectors, on
which this iteration coincides with the primal-dual one.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .blocks import BlockVector
from .product import OperatorBundle, assemble_B, assemble_S, beta_prime, lipschitz_mu, resolvent_Abold
from .solver import DIVERGENCE_NORM, IterateRecord, StopRule

logger = logging.getLogger(__name__)

FRB_FRACTION = 0.99


@dataclass(frozen=True)
class SingleInclusion:
    """``A`` through its resolvent ``(gamma, x) -> J_{gamma A} x``; ``B``, ``Q`` as plain maps."""

    A: Callable[[float, np.ndarray], np.ndarray]
    B: Callable[[np.ndarray], np.ndarray]
    Q: Callable[[np.ndarray], np.ndarray]
    beta: float
    mu: float
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")


def frb_gamma_bound(beta: float, mu: float) -> float:
    if not beta > 0 or mu < 0:
        raise ValueError("need beta > 0 and mu >= 0")
    if math.isinf(beta):
        return math.inf if mu == 0 else 1.0 / (2.0 * mu)
    return 2.0 * beta / (1.0 + 4.0 * beta * mu)


def default_frb_gamma(problem: SingleInclusion) -> float:
    return FRB_FRACTION * frb_gamma_bound(problem.beta, problem.mu)


@dataclass
class FRBResult:
    solution: np.ndarray
    history: list
    status: str
    gamma: float
    iterates: Optional[list] = None  # (x_n, y_n) pairs when requested
    error: Optional[str] = None


def frb_run(
    problem: SingleInclusion,
    gamma: Optional[float] = None,
    seeds: tuple = (None, None),
    stop: StopRule = StopRule(),
    keep_iterates: bool = False,
    partition: Optional[Sequence[int]] = None,
) -> FRBResult:
    """Run the iteration from ``(x_{-1}, x_0)``; zero seeds when omitted.

    With ``partition`` (block sizes summing to ``dim``) the residual is
    reported per block: the first block as primal, the rest as duals.
    """
    cuts = None
    if partition is not None:
        if sum(partition) != problem.dim:
            raise ValueError(f"partition {list(partition)} does not add up to dim={problem.dim}")
        cuts = np.cumsum(partition)[:-1]
    bound = frb_gamma_bound(problem.beta, problem.mu)
    if gamma is None:
        gamma = FRB_FRACTION * bound
    if not 0 < gamma < bound:
        raise ValueError(f"gamma={gamma} must lie in (0, {bound}) = (0, 2β/(1+4βμ))")
    x_prev, x = (np.zeros(problem.dim) if s is None else np.asarray(s, dtype=float) for s in seeds)
    y_prev = problem.A(gamma, x_prev)
    y = problem.A(gamma, x)
    Qyp = problem.Q(y_prev)
    iterates = [(x, y)] if keep_iterates else None
    history = []
    cum = 0.0
    status, error = "iteration_limit", None
    for n in range(stop.max_iters):
        t0 = time.perf_counter_ns()
        Qy = problem.Q(y)
        x_next = y - gamma * (2.0 * Qy - Qyp) - gamma * problem.B(y)
        if not np.all(np.isfinite(x_next)) or np.linalg.norm(x_next) > DIVERGENCE_NORM:
            status, error = "diverged", f"iterate left the finite region at step {n}"
            logger.warning("frb diverged at step %d", n)
            break
        y_next = problem.A(gamma, x_next)
        # residual in (A + B + Q)(y_{n+1}); diagnostic only
        p = (x_next - y_next) / gamma + problem.B(y_next) + problem.Q(y_next)
        step_sq = float(np.dot(y_next - y, y_next - y))
        cum += step_sq
        if cuts is None:
            norms = [float(np.linalg.norm(p))]
        else:
            norms = [float(np.linalg.norm(part)) for part in np.split(p, cuts)]
        rec = IterateRecord(n + 1, step_sq, norms[0], norms[1:], cum, time.perf_counter_ns() - t0)
        history.append(rec)
        x, y, Qyp = x_next, y_next, Qy
        if keep_iterates:
            iterates.append((x, y))
        if rec.residual <= stop.tol:
            status = "converged"
            break
    return FRBResult(y, history, status, gamma, iterates, error)


def product_triple(bundle: OperatorBundle) -> SingleInclusion:
    """The stacked inclusion ``0 in A + B + S`` on flat vectors of the product space."""
    shape = bundle.shape
    S = assemble_S(bundle)
    Bb = assemble_B(bundle)

    def wrap(op):
        return lambda u: op(BlockVector.from_flat(u, shape, check_finite=False)).flatten()

    def resolvent(gamma, u):
        return resolvent_Abold(bundle, gamma, BlockVector.from_flat(u, shape, check_finite=False)).flatten()

    return SingleInclusion(resolvent, wrap(Bb), wrap(S), beta_prime(bundle), lipschitz_mu(bundle), shape.size)


__all__ = [
    "SingleInclusion",
    "FRBResult",
    "frb_gamma_bound",
    "default_frb_gamma",
    "frb_run",
    "product_triple",
]
