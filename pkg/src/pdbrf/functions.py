"""Registry of closed-form convex functions.

Each family knows its value, its proximity operator ``prox_{gamma f}``, its
conjugate value, and a piecewise-affine description of its subdifferential
graph. The graph description is what the active-set oracle consumes; it is
derived from the definition of each family, never from the prox map.

Parameters given as scalars broadcast over coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

INF = np.inf
# slack allowed when testing membership in an indicator's domain
FEAS_TOL = 1e-9


class UnknownFamilyError(ValueError):
    pass


class GraphUnsupported(NotImplementedError):
    """The function has no piecewise-affine subdifferential model."""


# ---------------------------------------------------------------------------
# piecewise-affine subdifferential graphs


@dataclass(frozen=True)
class Vertical:
    """Graph segment ``{t0} x [alo, ahi]``."""

    t0: float
    alo: float
    ahi: float

    def inverse(self):
        return Sloped(0.0, self.t0, self.alo, self.ahi)

    def shifted(self, slope, offset):
        base = slope * self.t0 + offset
        return Vertical(self.t0, self.alo + base, self.ahi + base)


@dataclass(frozen=True)
class Sloped:
    """Graph segment ``a = slope * t + offset`` for ``t`` in ``[tlo, thi]``."""

    slope: float
    offset: float
    tlo: float
    thi: float

    def inverse(self):
        if self.slope == 0.0:
            return Vertical(self.offset, self.tlo, self.thi)
        w, c = self.slope, self.offset
        return Sloped(1.0 / w, -c / w, w * self.tlo + c, w * self.thi + c)

    def shifted(self, slope, offset):
        return Sloped(self.slope + slope, self.offset + offset, self.tlo, self.thi)


@dataclass
class GraphModel:
    """``df(x) = M x + c + a`` with ``a_j`` in ``pieces[j](x_j)`` where given.

    Coordinates whose entry in ``pieces`` is ``None`` carry no set-valued part.
    """

    M: np.ndarray
    c: np.ndarray
    pieces: list

    @property
    def dim(self):
        return self.c.size

    def separable_pieces(self) -> list:
        """Fold the affine part into per-coordinate pieces (needs diagonal M)."""
        M = self.M
        if np.any(M - np.diag(np.diag(M))):
            raise GraphUnsupported("non-diagonal affine part cannot be split per coordinate")
        out = []
        for j in range(self.dim):
            w, c = float(M[j, j]), float(self.c[j])
            base = self.pieces[j] if self.pieces[j] is not None else (Sloped(0.0, 0.0, -INF, INF),)
            out.append(tuple(p.shifted(w, c) for p in base))
        return out

    def inverse(self) -> "GraphModel":
        """Model of the inverse graph, i.e. of the conjugate's subdifferential."""
        n = self.dim
        if all(p is None for p in self.pieces):
            try:
                Minv = np.linalg.inv(self.M)
            except np.linalg.LinAlgError:
                Minv = None
            if Minv is not None and np.all(np.isfinite(Minv)):
                return GraphModel(Minv, -Minv @ self.c, [None] * n)
        pieces = [tuple(p.inverse() for p in coord) for coord in self.separable_pieces()]
        return GraphModel(np.zeros((n, n)), np.zeros(n), pieces)


def _block_diag_models(models: Sequence[GraphModel]) -> GraphModel:
    n = sum(m.dim for m in models)
    M = np.zeros((n, n))
    c = np.zeros(n)
    pieces: list = []
    k = 0
    for mod in models:
        d = mod.dim
        M[k:k + d, k:k + d] = mod.M
        c[k:k + d] = mod.c
        pieces.extend(mod.pieces)
        k += d
    return GraphModel(M, c, pieces)


# ---------------------------------------------------------------------------
# families


def _vec(a, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if dim is not None:
        arr = np.broadcast_to(arr, (dim,)).astype(float)
    return arr


class ConvexFunction:
    """Base class for registered families."""

    family = "abstract"
    separable = True
    smooth = False

    def value(self, x) -> float:
        raise NotImplementedError

    def prox(self, gamma: float, x) -> np.ndarray:
        raise NotImplementedError

    def conjugate_value(self, u) -> float:
        raise NotImplementedError

    def graph(self, dim: int) -> GraphModel:
        raise NotImplementedError

    def subgradient(self, x) -> np.ndarray:
        """One subgradient of the finite-valued part; indicators contribute 0."""
        return np.zeros_like(np.asarray(x, dtype=float))

    def project_domain(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def domain_bounds(self, dim: int):
        return np.full(dim, -INF), np.full(dim, INF)

    def coordinate_terms(self, Y: np.ndarray) -> np.ndarray:
        """Per-coordinate contributions for a batch ``Y`` of shape (k, dim)."""
        raise GraphUnsupported(f"{self.family} is not separable")

    def is_separable(self, dim: int) -> bool:
        return self.separable

    def to_spec(self) -> dict:
        raise NotImplementedError


class Zero(ConvexFunction):
    family = "zero"
    smooth = True

    def value(self, x):
        return 0.0

    def prox(self, gamma, x):
        return np.array(x, dtype=float)

    def conjugate_value(self, u):
        return 0.0 if np.all(np.abs(u) <= FEAS_TOL) else INF

    def graph(self, dim):
        return GraphModel(np.zeros((dim, dim)), np.zeros(dim), [None] * dim)

    def coordinate_terms(self, Y):
        return np.zeros_like(Y)

    # smooth interface
    def gradient(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def gradient_lipschitz(self):
        return 0.0

    def strong_convexity(self):
        return 0.0

    def to_spec(self):
        return {"family": "zero"}


class L1Norm(ConvexFunction):
    family = "l1"

    def __init__(self, scale=1.0):
        self.scale = _vec(scale)
        if np.any(self.scale < 0):
            raise ValueError("l1 scale must be nonnegative")

    def value(self, x):
        return float(np.sum(self.scale * np.abs(x)))

    def prox(self, gamma, x):
        x = np.asarray(x, dtype=float)
        return np.sign(x) * np.maximum(np.abs(x) - gamma * self.scale, 0.0)

    def conjugate_value(self, u):
        u = np.asarray(u, dtype=float)
        ok = np.all(np.abs(u) <= self.scale + FEAS_TOL * (1 + self.scale))
        return 0.0 if ok else INF

    def subgradient(self, x):
        return self.scale * np.sign(x)

    def graph(self, dim):
        lam = _vec(self.scale, dim)
        pieces = [
            (Sloped(0.0, float(l), 0.0, INF), Sloped(0.0, -float(l), -INF, 0.0), Vertical(0.0, -float(l), float(l)))
            for l in lam
        ]
        return GraphModel(np.zeros((dim, dim)), np.zeros(dim), pieces)

    def coordinate_terms(self, Y):
        return self.scale * np.abs(Y)

    def to_spec(self):
        return {"family": "l1", "scale": self.scale.tolist()}


class SquaredDistance(ConvexFunction):
    """``(weight / 2) * ||x - center||^2``."""

    family = "sq_dist"
    smooth = True

    def __init__(self, weight=1.0, center=0.0):
        self.weight = float(weight)
        self.center = _vec(center)
        if self.weight < 0:
            raise ValueError("sq_dist weight must be nonnegative")

    def value(self, x):
        return 0.5 * self.weight * float(np.sum((np.asarray(x) - self.center) ** 2))

    def prox(self, gamma, x):
        w = self.weight
        return (np.asarray(x, dtype=float) + gamma * w * self.center) / (1.0 + gamma * w)

    def conjugate_value(self, u):
        u = np.asarray(u, dtype=float)
        lin = float(np.sum(u * self.center))
        if self.weight == 0.0:
            return lin if np.all(np.abs(u) <= FEAS_TOL) else INF
        return lin + float(np.dot(u, u)) / (2.0 * self.weight)

    def subgradient(self, x):
        return self.gradient(x)

    def graph(self, dim):
        w = self.weight
        return GraphModel(w * np.eye(dim), -w * _vec(self.center, dim), [None] * dim)

    def coordinate_terms(self, Y):
        return 0.5 * self.weight * (Y - self.center) ** 2

    def gradient(self, x):
        return self.weight * (np.asarray(x, dtype=float) - self.center)

    def gradient_lipschitz(self):
        return self.weight

    def strong_convexity(self):
        return self.weight

    def conjugate_gradient(self, u):
        return self.center + np.asarray(u, dtype=float) / self.weight

    def to_spec(self):
        return {"family": "sq_dist", "weight": self.weight, "center": self.center.tolist()}


class BoxIndicator(ConvexFunction):
    """Indicator of ``[lo, hi]`` (coordinatewise, bounds may be infinite)."""

    family = "box"

    def __init__(self, lo=-INF, hi=INF):
        self.lo = _vec(lo)
        self.hi = _vec(hi)
        if np.any(self.lo > self.hi):
            raise ValueError("box requires lo <= hi")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        tol = FEAS_TOL * (1 + np.abs(x))
        return 0.0 if np.all((x >= self.lo - tol) & (x <= self.hi + tol)) else INF

    def prox(self, gamma, x):
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    def project_domain(self, x):
        return self.prox(1.0, x)

    def conjugate_value(self, u):
        u = np.asarray(u, dtype=float)
        lo, hi = np.broadcast_arrays(self.lo, self.hi, u)[:2]
        up = np.where(u > 0, hi * np.where(u > 0, u, 1.0), 0.0)
        down = np.where(u < 0, lo * np.where(u < 0, u, 1.0), 0.0)
        return float(np.sum(up + down))

    def domain_bounds(self, dim):
        return _vec(self.lo, dim), _vec(self.hi, dim)

    def graph(self, dim):
        lo, hi = _vec(self.lo, dim), _vec(self.hi, dim)
        pieces = []
        for a, b in zip(lo, hi):
            a, b = float(a), float(b)
            if a == b:
                pieces.append((Vertical(a, -INF, INF),))
                continue
            coord = [Sloped(0.0, 0.0, a, b)]
            if np.isfinite(a):
                coord.append(Vertical(a, -INF, 0.0))
            if np.isfinite(b):
                coord.append(Vertical(b, 0.0, INF))
            pieces.append(tuple(coord))
        return GraphModel(np.zeros((dim, dim)), np.zeros(dim), pieces)

    def coordinate_terms(self, Y):
        tol = FEAS_TOL * (1 + np.abs(Y))
        inside = (Y >= self.lo - tol) & (Y <= self.hi + tol)
        return np.where(inside, 0.0, INF)

    def to_spec(self):
        return {"family": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class L2BallIndicator(ConvexFunction):
    """Indicator of the Euclidean ball ``||x - center|| <= radius``."""

    family = "l2_ball"
    separable = False

    def __init__(self, radius=1.0, center=0.0):
        self.radius = float(radius)
        self.center = _vec(center)
        if self.radius < 0:
            raise ValueError("l2_ball radius must be nonnegative")

    def value(self, x):
        d = np.linalg.norm(np.asarray(x, dtype=float) - self.center)
        return 0.0 if d <= self.radius + FEAS_TOL * (1 + self.radius) else INF

    def prox(self, gamma, x):
        x = np.asarray(x, dtype=float)
        d = x - self.center
        nrm = np.linalg.norm(d)
        if nrm <= self.radius:
            return x.copy()
        return self.center + d * (self.radius / nrm)

    def project_domain(self, x):
        return self.prox(1.0, x)

    def conjugate_value(self, u):
        u = np.asarray(u, dtype=float)
        return float(np.sum(self.center * u)) + self.radius * float(np.linalg.norm(u))

    def is_separable(self, dim):
        return dim == 1

    def domain_bounds(self, dim):
        if dim != 1:
            raise GraphUnsupported("l2_ball is separable only in dimension 1")
        c = float(np.ravel(self.center)[0]) if self.center.size else 0.0
        return np.array([c - self.radius]), np.array([c + self.radius])

    def coordinate_terms(self, Y):
        if Y.shape[1] != 1:
            raise GraphUnsupported("l2_ball is separable only in dimension 1")
        return np.where(np.abs(Y - self.center) <= self.radius * (1 + FEAS_TOL) + FEAS_TOL, 0.0, INF)

    def graph(self, dim):
        if dim != 1:
            raise GraphUnsupported("l2_ball has no piecewise-affine model beyond dimension 1")
        lo, hi = self.domain_bounds(1)
        return BoxIndicator(lo, hi).graph(1)

    def to_spec(self):
        return {"family": "l2_ball", "radius": self.radius, "center": self.center.tolist()}


class AffineQuadratic(ConvexFunction):
    """``0.5 <x, P x> + <b, x>`` with P symmetric positive semidefinite."""

    family = "quadratic"
    smooth = True

    def __init__(self, P, b=0.0):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[0] != P.shape[1]:
            raise ValueError("quadratic P must be square")
        if not np.allclose(P, P.T, atol=1e-12):
            raise ValueError("quadratic P must be symmetric")
        self.eigs = np.linalg.eigvalsh(P)
        if self.eigs[0] < -1e-12 * max(1.0, abs(self.eigs[-1])):
            raise ValueError(f"quadratic P is not positive semidefinite (min eigenvalue {self.eigs[0]:.3e})")
        self.P = P
        self.b = _vec(b, P.shape[0])
        self.separable = bool(np.all(P == np.diag(np.diag(P))))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ self.P @ x) + float(self.b @ x)

    def prox(self, gamma, x):
        n = self.P.shape[0]
        return np.linalg.solve(np.eye(n) + gamma * self.P, np.asarray(x, dtype=float) - gamma * self.b)

    def conjugate_value(self, u):
        d = np.asarray(u, dtype=float) - self.b
        sol, *_ = np.linalg.lstsq(self.P, d, rcond=None)
        if np.linalg.norm(self.P @ sol - d) > 1e-9 * (1 + np.linalg.norm(d)):
            return INF
        return 0.5 * float(d @ sol)

    def subgradient(self, x):
        return self.gradient(x)

    def graph(self, dim):
        return GraphModel(self.P.copy(), self.b.copy(), [None] * dim)

    def coordinate_terms(self, Y):
        if not self.separable:
            raise GraphUnsupported("quadratic with non-diagonal P is not separable")
        return 0.5 * np.diag(self.P) * Y**2 + self.b * Y

    def gradient(self, x):
        return self.P @ np.asarray(x, dtype=float) + self.b

    def gradient_lipschitz(self):
        return float(max(self.eigs[-1], 0.0))

    def strong_convexity(self):
        return float(max(self.eigs[0], 0.0))

    def conjugate_gradient(self, u):
        return np.linalg.solve(self.P, np.asarray(u, dtype=float) - self.b)

    def to_spec(self):
        return {"family": "quadratic", "P": self.P.tolist(), "b": self.b.tolist()}


class Separable(ConvexFunction):
    """Sum of registered functions acting on consecutive coordinate slices."""

    family = "separable"

    def __init__(self, parts: Sequence[tuple[int, ConvexFunction]]):
        if not parts:
            raise ValueError("separable needs at least one part")
        self.parts = [(int(n), fn) for n, fn in parts]
        self.sizes = [n for n, _ in self.parts]
        self.cuts = np.cumsum(self.sizes)[:-1]
        self.dim = int(sum(self.sizes))
        self.separable = all(fn.is_separable(n) for n, fn in self.parts)

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"separable function expects dimension {self.dim}, got {x.shape[-1]}")
        return np.split(x, self.cuts, axis=-1)

    def value(self, x):
        return float(sum(fn.value(xi) for (_, fn), xi in zip(self.parts, self._split(x))))

    def prox(self, gamma, x):
        return np.concatenate([fn.prox(gamma, xi) for (_, fn), xi in zip(self.parts, self._split(x))])

    def conjugate_value(self, u):
        return float(sum(fn.conjugate_value(ui) for (_, fn), ui in zip(self.parts, self._split(u))))

    def subgradient(self, x):
        return np.concatenate([fn.subgradient(xi) for (_, fn), xi in zip(self.parts, self._split(x))])

    def project_domain(self, x):
        return np.concatenate([fn.project_domain(xi) for (_, fn), xi in zip(self.parts, self._split(x))])

    def is_separable(self, dim):
        return self.separable

    def domain_bounds(self, dim):
        lows, highs = zip(*(fn.domain_bounds(n) for n, fn in self.parts))
        return np.concatenate(lows), np.concatenate(highs)

    def coordinate_terms(self, Y):
        return np.concatenate([fn.coordinate_terms(Yi) for (_, fn), Yi in zip(self.parts, self._split(Y))], axis=-1)

    def graph(self, dim):
        if dim != self.dim:
            raise ValueError(f"separable function has dimension {self.dim}, asked for {dim}")
        return _block_diag_models([fn.graph(n) for n, fn in self.parts])

    def to_spec(self):
        return {"family": "separable", "parts": [dict(size=n, **fn.to_spec()) for n, fn in self.parts]}


FAMILIES: dict[str, type] = {
    "zero": Zero,
    "l1": L1Norm,
    "sq_dist": SquaredDistance,
    "box": BoxIndicator,
    "l2_ball": L2BallIndicator,
    "quadratic": AffineQuadratic,
    "separable": Separable,
}

SMOOTH_FAMILIES = ("zero", "sq_dist", "quadratic")


def make_function(spec: Any) -> ConvexFunction:
    """Build a registered function from ``{"family": name, **params}``."""
    if isinstance(spec, ConvexFunction):
        return spec
    if not isinstance(spec, Mapping) or "family" not in spec:
        raise UnknownFamilyError(f"function spec must be a mapping with a 'family' key, got {spec!r}")
    params = dict(spec)
    name = params.pop("family")
    if name not in FAMILIES:
        raise UnknownFamilyError(f"unknown function family {name!r}; known: {sorted(FAMILIES)}")
    if name == "separable":
        parts = []
        for part in params.pop("parts"):
            part = dict(part)
            size = part.pop("size")
            parts.append((size, make_function(part)))
        if params:
            raise TypeError(f"unexpected parameters for separable: {sorted(params)}")
        return Separable(parts)
    try:
        return FAMILIES[name](**params)
    except TypeError as exc:
        raise TypeError(f"bad parameters for family {name!r}: {exc}") from None
