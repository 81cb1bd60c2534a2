"""Primal-dual backward-reflected-forward iteration.

One step, with ``y_n = J_{gamma A}(x_n + gamma z)`` and
``w_{i,n} = J_{gamma A_i}(v_{i,n} - gamma r_i)`` already known:

    x_{n+1}   = y_n - gamma sum_i L_i*(2 w_{i,n} - w_{i,n-1})
                    - gamma (2 Q_n y_n - Q_n y_{n-1}) - gamma B_n y_n
    v_{i,n+1} = w_{i,n} - gamma (2 Q_{i,n} w_{i,n} - Q_{i,n} w_{i,n-1})
                    + gamma L_i (2 y_n - y_{n-1}) - gamma B_{i,n} w_{i,n}

Each step evaluates every ``B``, ``Q``, ``L_i`` and ``L_i*`` exactly once.
The ``Q y_{n-1}`` reflection values are reused from the previous step when
the operator is unchanged; with inexact operators that change with ``n``,
``Q_n y_{n-1}`` is evaluated afresh, as the iteration prescribes.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .blocks import BlockVector, block_combine, block_norm
from .inexact import PerturbationSchedule, perturb
from .product import OperatorBundle, assemble_B, assemble_S, resolvent_Abold

logger = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e12
BETA_FRACTION = 0.99
# rounding allowance when re-checking a step size against its own bound
POLICY_RTOL = 1e-12

STEP_INEQUALITY = "1 − γ/(2β) − 2γμ − 7γκ ≥ ε"


class StepSizeError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message, n, record=None):
        super().__init__(message)
        self.n = n
        self.record = record


@dataclass(frozen=True)
class StepPolicy:
    gamma: float
    epsilon: float
    kappa_sup: float
    beta: float
    mu: float

    @property
    def margin(self) -> float:
        """``1 - gamma/(2 beta) - 2 gamma mu - 7 gamma kappa_sup``."""
        return step_margin(self.gamma, self.beta, self.mu, self.kappa_sup)


def step_margin(gamma, beta, mu, kappa_sup):
    inv = 0.0 if math.isinf(beta) else 1.0 / (2.0 * beta)
    return 1.0 - gamma * inv - 2.0 * gamma * mu - 7.0 * gamma * kappa_sup


def _validate_constants(beta_prime, mu, kappa_sup, epsilon):
    if not beta_prime > 0:
        raise StepSizeError(f"beta' must be positive, got {beta_prime}")
    if mu < 0 or kappa_sup < 0:
        raise StepSizeError("mu and kappa_sup must be nonnegative")
    if not 0 < epsilon < 1:
        raise StepSizeError(f"epsilon must lie in (0, 1), got {epsilon}; no feasible step size")


def choose_gamma(beta_prime: float, mu: float, kappa_sup: float = 0.0, epsilon: float = 0.01) -> StepPolicy:
    """Largest step with ``1 - g/(2b) - 2 g mu - 7 g kappa = epsilon``, ``b = 0.99 beta'``."""
    _validate_constants(beta_prime, mu, kappa_sup, epsilon)
    beta = BETA_FRACTION * beta_prime
    denom = (0.0 if math.isinf(beta) else 1.0 / (2.0 * beta)) + 2.0 * mu + 7.0 * kappa_sup
    if denom == 0.0:
        raise StepSizeError("step size is unbounded (no cocoercive, Lipschitz or coupling term)")
    return StepPolicy((1.0 - epsilon) / denom, epsilon, kappa_sup, beta, mu)


def check_gamma(gamma: float, beta_prime: float, mu: float, kappa_sup: float = 0.0, epsilon: float = 0.01) -> StepPolicy:
    """Accept a user step size only if it satisfies the step inequality."""
    _validate_constants(beta_prime, mu, kappa_sup, epsilon)
    if not gamma > 0:
        raise StepSizeError(f"gamma must be positive, got {gamma}")
    beta = BETA_FRACTION * beta_prime
    margin = step_margin(gamma, beta, mu, kappa_sup)
    if margin < epsilon - POLICY_RTOL * max(1.0, abs(epsilon)):
        raise StepSizeError(
            f"gamma={gamma!r} violates {STEP_INEQUALITY}: "
            f"1 - {gamma:.6g}/(2*{beta:.6g}) - 2*{gamma:.6g}*{mu:.6g} - 7*{gamma:.6g}*{kappa_sup:.6g} "
            f"= {margin:.6g} < {epsilon:.6g}"
        )
    return StepPolicy(gamma, epsilon, kappa_sup, beta, mu)


@dataclass(frozen=True)
class Seeds:
    """Starting points ``x_{-1}`` and ``x_0`` (zero when omitted)."""

    x_prev: Optional[BlockVector] = None
    x0: Optional[BlockVector] = None


@dataclass(frozen=True)
class StopRule:
    max_iters: int = 10_000
    tol: float = 1e-8


@dataclass(frozen=True)
class SolverState:
    x: BlockVector  # x_n, v_{i,n}
    y_curr: BlockVector  # y_n, w_{i,n}
    y_prev: BlockVector  # y_{n-1}, w_{i,n-1}
    n: int
    # (operator, value) of the Lipschitz maps at y_prev, per block 0..m
    q_prev: tuple = field(default=(), repr=False, compare=False)


@dataclass
class IterateRecord:
    n: int
    step_norm_sq: float
    primal_residual_norm: float
    dual_residual_norms: list
    cumulative_step_sum: float
    wall_time_ns: int = 0

    @property
    def residual(self) -> float:
        return max([self.primal_residual_norm, *self.dual_residual_norms])


def initialize(bundle_0: OperatorBundle, gamma: float, seeds: Seeds = Seeds()) -> SolverState:
    """Resolve the seeds and cache the reflection values at ``y_{-1}``."""
    zero = bundle_0.shape.zeros()
    x_prev = seeds.x_prev if seeds.x_prev is not None else zero
    x0 = seeds.x0 if seeds.x0 is not None else zero
    y_prev = resolvent_Abold(bundle_0, gamma, x_prev)
    y0 = resolvent_Abold(bundle_0, gamma, x0)
    qs = [bundle_0.Q, *(b.Q for b in bundle_0.blocks)]
    cache = tuple((q, q(v)) for q, v in zip(qs, y_prev.blocks()))
    return SolverState(x0, y0, y_prev, 0, cache)


def _reflected(op, cached, point):
    cached_op, value = cached
    if cached_op is op:
        return value
    return op(point)


def _diverged(u: BlockVector) -> bool:
    return not u.is_finite() or block_norm(u) > DIVERGENCE_NORM


def brf_step(bundle_n: OperatorBundle, gamma: float, state: SolverState) -> SolverState:
    """Advance ``(x_n, y_n, y_{n-1})`` to ``(x_{n+1}, y_{n+1}, y_n)``."""
    y, yp = state.y_curr.primal, state.y_prev.primal
    ws, wps = state.y_curr.duals, state.y_prev.duals
    blocks = bundle_n.blocks

    Qy = bundle_n.Q(y)
    Qyp = _reflected(bundle_n.Q, state.q_prev[0], yp)
    By = bundle_n.B(y)
    coupling = blocks[0].L.adjoint(2.0 * ws[0] - wps[0])
    for b, w, wp in zip(blocks[1:], ws[1:], wps[1:]):
        coupling = coupling + b.L.adjoint(2.0 * w - wp)
    x_new = y - gamma * coupling - gamma * (2.0 * Qy - Qyp) - gamma * By

    ly = 2.0 * y - yp
    v_new = []
    q_cache = [(bundle_n.Q, Qy)]
    for i, (b, w, wp) in enumerate(zip(blocks, ws, wps), start=1):
        Qw = b.Q(w)
        Qwp = _reflected(b.Q, state.q_prev[i], wp)
        Bw = b.B(w)
        v_new.append(w - gamma * (2.0 * Qw - Qwp) + gamma * b.L(ly) - gamma * Bw)
        q_cache.append((b.Q, Qw))

    x_next = BlockVector(x_new, v_new, check_finite=False)
    if _diverged(x_next):
        raise DivergenceError(f"iterate left the finite region at step {state.n}", state.n)
    y_next = resolvent_Abold(bundle_n, gamma, x_next)
    return SolverState(x_next, y_next, state.y_curr, state.n + 1, tuple(q_cache))


def product_step(bundle_n: OperatorBundle, gamma: float, state: SolverState) -> SolverState:
    """Same step written on the product space: ``y - 2g S y + g S y' - g B y``."""
    S = assemble_S(bundle_n)
    Bb = assemble_B(bundle_n)
    y, yp = state.y_curr, state.y_prev
    x_next = block_combine(1.0, block_combine(1.0, y, -2.0 * gamma, S(y)), gamma, S(yp))
    x_next = block_combine(1.0, x_next, -gamma, Bb(y))
    if _diverged(x_next):
        raise DivergenceError(f"iterate left the finite region at step {state.n}", state.n)
    y_next = resolvent_Abold(bundle_n, gamma, x_next)
    return SolverState(x_next, y_next, y, state.n + 1)


def primal_residual(state: SolverState, bundle_n: OperatorBundle, gamma: float) -> np.ndarray:
    """``p = (x - y)/gamma + B_n y + Q_n y + sum_i L_i* w_i`` at the current iterate.

    ``bundle_n`` must hold the operators of the step that produced ``state``.
    """
    x, y = state.x.primal, state.y_curr.primal
    p = (x - y) / gamma + bundle_n.B(y) + bundle_n.Q(y)
    for b, w in zip(bundle_n.blocks, state.y_curr.duals):
        p = p + b.L.adjoint(w)
    if not np.all(np.isfinite(p)):
        raise DivergenceError("primal residual is not finite", state.n)
    return p


def dual_residuals(state: SolverState, bundle_n: OperatorBundle, gamma: float) -> list:
    """``q_i = (v_i - w_i)/gamma + B_{i,n} w_i + Q_{i,n} w_i - L_i y`` per block."""
    y = state.y_curr.primal
    out = []
    for b, v, w in zip(bundle_n.blocks, state.x.duals, state.y_curr.duals):
        q = (v - w) / gamma + b.B(w) + b.Q(w) - b.L(y)
        if not np.all(np.isfinite(q)):
            raise DivergenceError("dual residual is not finite", state.n)
        out.append(q)
    return out


def limit_point_formula(bundle: OperatorBundle, gamma: float, xbar: BlockVector) -> BlockVector:
    """Predicted limit of the raw iterates: ``(Id - gamma S - gamma B) xbar``."""
    S = assemble_S(bundle)(xbar)
    Bb = assemble_B(bundle)(xbar)
    return block_combine(1.0, block_combine(1.0, xbar, -gamma, S), -gamma, Bb)


@dataclass
class RunResult:
    solution: BlockVector
    history: list
    status: str  # converged | iteration_limit | diverged
    state: SolverState
    gamma: float
    iterates: Optional[list] = None  # (x_n, y_n) pairs when requested
    error: Optional[str] = None

    @property
    def iterations(self) -> int:
        return len(self.history)


def run(
    bundle: OperatorBundle,
    perturbation: Optional[PerturbationSchedule],
    policy: StepPolicy,
    seeds: Seeds = Seeds(),
    stop: StopRule = StopRule(),
    keep_iterates: bool = False,
    step=brf_step,
) -> RunResult:
    """Iterate until ``max(||p||, max_i ||q_i||) <= tol`` or the budget runs out."""
    gamma = policy.gamma
    state = initialize(perturb(bundle, perturbation, 0), gamma, seeds)
    iterates = [(state.x, state.y_curr)] if keep_iterates else None
    history: list[IterateRecord] = []
    cum = 0.0
    status = "iteration_limit"
    error = None
    for n in range(stop.max_iters):
        bundle_n = perturb(bundle, perturbation, n)
        t0 = time.perf_counter_ns()
        try:
            new = step(bundle_n, gamma, state)
            p = primal_residual(new, bundle_n, gamma)
            qs = dual_residuals(new, bundle_n, gamma)
        except DivergenceError as exc:
            status, error = "diverged", str(exc)
            logger.warning("run diverged: %s", exc)
            break
        elapsed = time.perf_counter_ns() - t0
        d = block_combine(1.0, new.y_curr, -1.0, new.y_prev)
        step_sq = block_norm(d) ** 2
        cum += step_sq
        rec = IterateRecord(
            n + 1, step_sq, float(np.linalg.norm(p)), [float(np.linalg.norm(q)) for q in qs], cum, elapsed
        )
        history.append(rec)
        state = new
        if keep_iterates:
            iterates.append((state.x, state.y_curr))
        if rec.residual <= stop.tol:
            status = "converged"
            break
    return RunResult(state.y_curr, history, status, state, gamma, iterates, error)
