"""Primal-dual backward-reflected-forward splitting for structured monotone inclusions."""

from .blocks import BlockVector, ShapeError, SpaceShape, block_combine, block_dot, block_norm
from .convex import MinBlock, MinProblem, build_inclusion, dual_objective, primal_objective, solve_min
from .frb import SingleInclusion, frb_gamma_bound, frb_run, product_triple
from .functions import make_function
from .inexact import (
    FiniteSchedule,
    GeometricSchedule,
    ZeroSchedule,
    audit_condition,
    kappa_aggregate,
    kappa_sup,
    perturb,
)
from .operators import (
    CocoerciveOperator,
    LinearMap,
    LipschitzMonotoneOperator,
    ResolventOperator,
    conjugate_prox,
    estimate_operator_norm,
    prox_factory,
)
from .oracles import active_set_oracle, grid_prox_oracle, kkt_residual, subgradient_oracle
from .product import OperatorBundle, assemble_B, assemble_S, make_bundle, resolvent_Abold
from .solver import (
    DivergenceError,
    Seeds,
    StepPolicy,
    StopRule,
    brf_step,
    check_gamma,
    choose_gamma,
    limit_point_formula,
    run,
)

__version__ = "0.1.0"
