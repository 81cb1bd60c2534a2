"""Run configuration: YAML text validated into pydantic models.

A config names a problem (either a raw inclusion or a structured convex
minimization), a solver and the run controls. JSON is accepted too, being a
subset of YAML. Unknown keys are rejected at every level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .blocks import ShapeError
from .convex import MinBlock, MinProblem, build_inclusion
from .functions import UnknownFamilyError, make_function
from .frb import FRB_FRACTION, frb_gamma_bound
from .inexact import FiniteSchedule, GeometricSchedule, PerturbationSchedule, ScheduleError, ZeroSchedule, kappa_sup
from .operators import CocoerciveOperator, LinearMap, LipschitzMonotoneOperator, ResolventOperator, conjugate_prox
from .product import BundleError, OperatorBundle, beta_prime, lipschitz_mu, make_bundle
from .solver import StepPolicy, StepSizeError, check_gamma, choose_gamma


class ConfigError(ValueError):
    """Invalid configuration; ``line``/``column`` are 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.column = column


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


Vector = Union[float, list[float]]
Matrix = list[list[float]]


def _function_spec(v):
    if not isinstance(v, dict):
        raise ValueError("function spec must be a mapping with a 'family' key")
    try:
        make_function(v)
    except (UnknownFamilyError, TypeError, ValueError, KeyError) as exc:
        raise ValueError(str(exc)) from None
    return v


class LinearSpec(_Strict):
    kind: Literal["identity", "diagonal", "matrix", "zero"]
    diag: Optional[list[float]] = None
    matrix: Optional[Matrix] = None
    norm_bound: Optional[float] = Field(default=None, ge=0)


class AffineSpec(_Strict):
    """``x -> M x + c``; ``kind: zero`` for the zero map."""

    kind: Literal["linear", "zero"]
    matrix: Optional[Matrix] = None
    offset: Optional[Vector] = None
    beta: Optional[float] = Field(default=None, gt=0)
    mu: Optional[float] = Field(default=None, ge=0)


class ResolventSpec(_Strict):
    """Resolvent of ``df`` (or of ``df*`` when ``conjugate``)."""

    function: dict[str, Any]
    conjugate: bool = False

    @field_validator("function")
    @classmethod
    def _known_family(cls, v):
        return _function_spec(v)


class InclusionBlockSpec(_Strict):
    dim: int = Field(ge=1)
    A: ResolventSpec
    B: AffineSpec = AffineSpec(kind="zero")
    Q: AffineSpec = AffineSpec(kind="zero")
    L: LinearSpec
    r: Vector = 0.0


class InclusionSpec(_Strict):
    kind: Literal["inclusion"]
    dim: int = Field(ge=1)
    A: ResolventSpec
    B: AffineSpec = AffineSpec(kind="zero")
    Q: AffineSpec = AffineSpec(kind="zero")
    z: Vector = 0.0
    blocks: list[InclusionBlockSpec] = Field(min_length=1)


class MinBlockSpec(_Strict):
    dim: int = Field(ge=1)
    g: dict[str, Any]
    ell: dict[str, Any]
    L: LinearSpec
    r: Vector = 0.0

    @field_validator("g", "ell")
    @classmethod
    def _known_family(cls, v):
        return _function_spec(v)


class MinSpec(_Strict):
    kind: Literal["min"]
    dim: int = Field(ge=1)
    f: dict[str, Any]
    h: dict[str, Any] = {"family": "zero"}
    z: Vector = 0.0
    blocks: list[MinBlockSpec] = Field(min_length=1)

    @field_validator("f", "h")
    @classmethod
    def _known_family(cls, v):
        return _function_spec(v)


class PerturbationSpec(_Strict):
    family: Literal["zero", "geometric", "finite"]
    aggregate: Optional[float] = Field(default=None, ge=0)
    kappas: Optional[list[float]] = None
    weights: Optional[list[float]] = None
    rho: float = Field(default=0.5, ge=0, lt=1)
    table: Optional[list[list[float]]] = None
    targets: list[Literal["B", "Q"]] = ["B", "Q"]
    anchors_B: Optional[list[Optional[Vector]]] = None
    anchors_Q: Optional[list[Optional[Vector]]] = None


class StopSpec(_Strict):
    max_iters: int = Field(default=10_000, ge=0)
    tol: float = Field(default=1e-8, gt=0)


class ResolvedSpec(_Strict):
    """Computed run constants echoed by the manifest; recomputed on every run."""

    gamma: float
    mu: float
    beta_prime: float
    beta: float
    kappa_sup: float
    epsilon: float


class RunConfig(_Strict):
    problem: Union[InclusionSpec, MinSpec] = Field(discriminator="kind")
    solver: Literal["brf", "frb", "convex_min"] = "brf"
    gamma: Optional[float] = Field(default=None, gt=0)
    epsilon: float = Field(default=0.01, gt=0, lt=1)
    perturbation: Optional[PerturbationSpec] = None
    stop: StopSpec = StopSpec()
    seed: int = 0
    init: Literal["zero", "random"] = "zero"
    timing: bool = False
    output: Optional[str] = None
    resolved: Optional[ResolvedSpec] = None


# ---------------------------------------------------------------------------
# parsing


def _mark(exc):
    mark = getattr(exc, "problem_mark", None) or getattr(exc, "context_mark", None)
    if mark is None:
        return None, None
    return mark.line + 1, mark.column + 1


def _locate(node, path):
    """Best-effort (line, column) of a key path inside a composed YAML node."""
    for key in path:
        if isinstance(node, yaml.MappingNode):
            hit = next(((k, v) for k, v in node.value if k.value == str(key)), None)
            if hit is None:
                break
            node = hit[1]
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
    return node.start_mark.line + 1, node.start_mark.column + 1


def parse_config(text: str) -> RunConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        line, col = _mark(exc)
        raise ConfigError(f"cannot parse config: {getattr(exc, 'problem', exc)}", line, col) from None
    if data is None:
        raise ConfigError("config is empty", 1, 1)
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level", 1, 1)
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = [p for p in err["loc"] if not (isinstance(p, str) and p in ("inclusion", "min"))]
        line, col = _locate(node, loc)
        path = ".".join(str(p) for p in loc) or "<root>"
        raise ConfigError(f"{path}: {err['msg']}", line, col) from None
    check_config(cfg)
    return cfg


def check_config(cfg: RunConfig) -> None:
    """Cross-field checks that the models cannot express."""
    if cfg.solver == "convex_min" and cfg.problem.kind != "min":
        raise ConfigError("solver convex_min needs a problem of kind 'min'")
    try:
        bundle = build_bundle(cfg)
        schedule = build_schedule(cfg)
        _probe_shapes(bundle)
    except (ShapeError, BundleError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    resolve_step(cfg, bundle, schedule)


@dataclass(frozen=True)
class ResolvedStep:
    gamma: float
    mu: float
    beta_prime: float
    beta: float
    kappa_sup: float
    epsilon: float
    policy: Optional[StepPolicy] = None  # None for the frb solver

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("gamma", "mu", "beta_prime", "beta", "kappa_sup", "epsilon")}


def resolve_step(cfg: RunConfig, bundle: OperatorBundle, schedule: Optional[PerturbationSchedule]) -> ResolvedStep:
    """Step size and constants for the configured solver; rejects an infeasible ``gamma``."""
    bp = beta_prime(bundle)
    mu = lipschitz_mu(bundle)
    if cfg.solver == "frb":
        if schedule is not None:
            raise ConfigError("the frb solver runs exact operators only; drop 'perturbation'")
        bound = frb_gamma_bound(bp, mu)
        gamma = cfg.gamma if cfg.gamma is not None else FRB_FRACTION * bound
        if not gamma < bound:
            raise ConfigError(f"gamma={gamma!r} violates γ < 2β/(1+4βμ) = {bound!r}")
        return ResolvedStep(gamma, mu, bp, bp, 0.0, cfg.epsilon)
    try:
        ks = kappa_sup(schedule)
        if cfg.gamma is not None:
            policy = check_gamma(cfg.gamma, bp, mu, ks, cfg.epsilon)
        else:
            policy = choose_gamma(bp, mu, ks, cfg.epsilon)
    except (StepSizeError, ScheduleError) as exc:
        raise ConfigError(str(exc)) from None
    return ResolvedStep(policy.gamma, mu, bp, policy.beta, ks, cfg.epsilon, policy)


def _probe_shapes(bundle: OperatorBundle) -> None:
    """Evaluate every operator once at the origin to catch parameter/dimension clashes."""
    ops = [(bundle.A, bundle.B, bundle.Q, bundle.z.size, "primal")]
    ops += [(b.A, b.B, b.Q, b.r.size, f"block {i}") for i, b in enumerate(bundle.blocks, 1)]
    for A, B, Q, dim, what in ops:
        x = np.zeros(dim)
        for name, out in (("A", A(1.0, x)), ("B", B(x)), ("Q", Q(x))):
            if np.shape(out) != (dim,):
                raise ShapeError(f"{name} of {what} returns shape {np.shape(out)}, expected ({dim},)")


# ---------------------------------------------------------------------------
# building


def _vector(v, dim, what):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size == 1:
        return np.full(dim, float(arr[0]))
    if arr.size != dim:
        raise ShapeError(f"{what} has length {arr.size}, expected {dim}")
    return arr


def _matrix(m, shape, what):
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2 or arr.shape != shape:
        raise ShapeError(f"{what} has shape {arr.shape}, expected {shape}")
    return arr


def build_linear(spec: LinearSpec, n_out: int, n_in: int, what: str) -> LinearMap:
    if spec.kind == "identity":
        if n_out != n_in:
            raise ShapeError(f"{what}: identity needs equal dimensions, got {n_out} and {n_in}")
        L = LinearMap.identity(n_in, name=what)
    elif spec.kind == "diagonal":
        if n_out != n_in or spec.diag is None:
            raise ShapeError(f"{what}: diagonal needs 'diag' and equal dimensions")
        L = LinearMap.diagonal(_vector(spec.diag, n_in, what), name=what)
    elif spec.kind == "zero":
        L = LinearMap.zero(n_out, n_in, name=what)
    else:
        if spec.matrix is None:
            raise ShapeError(f"{what}: kind 'matrix' needs 'matrix'")
        L = LinearMap.from_matrix(_matrix(spec.matrix, (n_out, n_in), what), name=what)
    if spec.norm_bound is not None:
        L = L.with_norm_bound(spec.norm_bound)
    return L


def _affine(spec: AffineSpec, dim, cls, what):
    if spec.kind == "zero":
        return cls.zero(what)
    if spec.matrix is None:
        raise ShapeError(f"{what}: kind 'linear' needs 'matrix'")
    M = _matrix(spec.matrix, (dim, dim), what)
    c = _vector(spec.offset if spec.offset is not None else 0.0, dim, what)
    if cls is CocoerciveOperator:
        if spec.mu is not None:
            raise ShapeError(f"{what}: a cocoercive term takes 'beta', not 'mu'")
        return CocoerciveOperator.affine(M, c, beta=spec.beta, name=what)
    if spec.beta is not None:
        raise ShapeError(f"{what}: a Lipschitz term takes 'mu', not 'beta'")
    return LipschitzMonotoneOperator.affine(M, c, mu=spec.mu, name=what)


def _resolvent(spec: ResolventSpec, what) -> ResolventOperator:
    fn = make_function(spec.function)
    base = ResolventOperator(fn.prox, name=f"{what}:prox[{fn.family}]", graph=fn.graph, function=fn)
    return conjugate_prox(base) if spec.conjugate else base


def build_min_problem(spec: MinSpec) -> MinProblem:
    blocks = tuple(
        MinBlock(
            make_function(b.g),
            make_function(b.ell),
            build_linear(b.L, b.dim, spec.dim, f"L_{i}"),
            _vector(b.r, b.dim, f"r_{i}"),
        )
        for i, b in enumerate(spec.blocks, 1)
    )
    return MinProblem(make_function(spec.f), make_function(spec.h), _vector(spec.z, spec.dim, "z"), blocks)


def build_bundle(cfg: RunConfig) -> OperatorBundle:
    """Operator bundle for the configured problem, with norm bounds filled in."""
    spec = cfg.problem
    if spec.kind == "min":
        bundle = build_inclusion(build_min_problem(spec))
    else:
        n = spec.dim
        blocks = [
            (
                _resolvent(b.A, f"A_{i}"),
                _affine(b.B, b.dim, CocoerciveOperator, f"B_{i}"),
                _affine(b.Q, b.dim, LipschitzMonotoneOperator, f"Q_{i}"),
                build_linear(b.L, b.dim, n, f"L_{i}"),
                _vector(b.r, b.dim, f"r_{i}"),
            )
            for i, b in enumerate(spec.blocks, 1)
        ]
        bundle = make_bundle(
            _resolvent(spec.A, "A"),
            _affine(spec.B, n, CocoerciveOperator, "B"),
            _affine(spec.Q, n, LipschitzMonotoneOperator, "Q"),
            _vector(spec.z, n, "z"),
            blocks,
        )
    return bundle.with_norm_bounds(seed=cfg.seed)


def build_schedule(cfg: RunConfig) -> Optional[PerturbationSchedule]:
    spec = cfg.perturbation
    if spec is None:
        return None
    m = len(cfg.problem.blocks)
    dims = [cfg.problem.dim, *(b.dim for b in cfg.problem.blocks)]

    def anchors(raw):
        if raw is None:
            return None
        if len(raw) != m + 1:
            raise ShapeError(f"need {m + 1} anchors, got {len(raw)}")
        return [None if a is None else _vector(a, d, "anchor") for a, d in zip(raw, dims)]

    kw = dict(anchors_B=anchors(spec.anchors_B), anchors_Q=anchors(spec.anchors_Q), targets=tuple(spec.targets))
    if spec.family == "zero":
        return ZeroSchedule(m=m, **kw)
    if spec.family == "finite":
        if spec.table is None:
            raise ValueError("finite schedule needs 'table'")
        return FiniteSchedule(m=m, table=spec.table, **kw)
    if spec.kappas is not None:
        return GeometricSchedule(m=m, kappas=spec.kappas, rho=spec.rho, **kw)
    if spec.aggregate is None:
        raise ValueError("geometric schedule needs 'aggregate' or 'kappas'")
    return GeometricSchedule.from_aggregate(m, spec.aggregate, spec.rho, weights=spec.weights, **kw)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
