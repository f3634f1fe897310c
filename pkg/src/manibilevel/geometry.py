"""Core geometric types and the abstract manifold contract.

Points and tangent vectors are immutable wrappers around dense arrays, tagged
with the manifold (and, for tangents, the base point) that owns them. All
manifold operations are pure functions of their inputs; nothing here mutates
shared state, so values can be used freely across concurrent solver runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, UnsupportedOperationError

TOL_MEM = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.flags.writeable:
        a = a.copy()
        a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    """A point on a manifold: dense coordinates plus the owning manifold."""

    coords: np.ndarray
    manifold: "Manifold"

    @property
    def manifold_id(self) -> str:
        return self.manifold.name

    def __repr__(self) -> str:
        return f"ManifoldPoint({self.manifold.name}, shape={self.coords.shape})"


@dataclass(frozen=True, eq=False)
class TangentVec:
    """A tangent vector at ``base``; coordinates live in the ambient space."""

    coords: np.ndarray
    base: ManifoldPoint

    @property
    def manifold(self) -> "Manifold":
        return self.base.manifold

    def __add__(self, other: "TangentVec") -> "TangentVec":
        require_same_base(self, other)
        return TangentVec(_frozen(self.coords + other.coords), self.base)

    def __sub__(self, other: "TangentVec") -> "TangentVec":
        require_same_base(self, other)
        return TangentVec(_frozen(self.coords - other.coords), self.base)

    def __neg__(self) -> "TangentVec":
        return TangentVec(_frozen(-self.coords), self.base)

    def __mul__(self, scalar: float) -> "TangentVec":
        return TangentVec(_frozen(self.coords * float(scalar)), self.base)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"TangentVec({self.manifold.name}, shape={self.coords.shape})"


def same_point(a: ManifoldPoint, b: ManifoldPoint) -> bool:
    if a is b:
        return True
    return a.manifold == b.manifold and np.array_equal(a.coords, b.coords)


def require_base(x: ManifoldPoint, u: TangentVec, what: str = "tangent") -> None:
    if not same_point(u.base, x):
        raise ContractError(f"{what} is based at a different point than expected")


def require_same_base(u: TangentVec, v: TangentVec) -> None:
    if not same_point(u.base, v.base):
        raise ContractError("tangent vectors have mismatched base points")


@dataclass(frozen=True)
class LinearMapAction:
    """A linear operator between tangent spaces given by its action and adjoint.

    The adjoint is taken with respect to the Riemannian metrics of the domain
    and codomain: <apply(u), v>_codomain = <u, adjoint_apply(v)>_domain.
    """

    apply: Callable[[TangentVec], TangentVec]
    adjoint_apply: Callable[[TangentVec], TangentVec]
    domain_base: ManifoldPoint
    codomain_base: ManifoldPoint


class Manifold:
    """Abstract Riemannian manifold over dense real matrix coordinates.

    Concrete manifolds implement the raw-array kernels (``_inner``, ``_exp``,
    ...); this base class adds contract checks and the point/tangent wrappers.
    Operations that a manifold does not support raise
    :class:`UnsupportedOperationError`.
    """

    tol_mem: float = TOL_MEM
    has_exp: bool = True
    has_log: bool = True
    has_isometric_transport: bool = True
    # True when exp is a first-order retraction chart rather than the metric
    # exponential; log still inverts exp exactly, but dist is then only
    # symmetric to second order in the separation.
    exp_is_chart: bool = False

    # -- identification -------------------------------------------------

    @property
    def name(self) -> str:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def ambient_shape(self) -> tuple:
        raise NotImplementedError

    def _signature(self) -> tuple:
        raise NotImplementedError

    def __eq__(self, other) -> bool:
        return type(self) is type(other) and self._signature() == other._signature()

    def __hash__(self) -> int:
        return hash((type(self).__name__, self._signature()))

    @property
    def membership_tol(self) -> float:
        return self.tol_mem

    # -- wrapping and validation -----------------------------------------

    def point(self, coords) -> ManifoldPoint:
        """Wrap coordinates as a point, enforcing the membership invariant."""
        coords = _frozen(np.asarray(coords, dtype=float))
        if coords.shape != self.ambient_shape:
            raise ContractError(
                f"{self.name}: expected coords of shape {self.ambient_shape}, got {coords.shape}"
            )
        res = self.check_point(coords)
        if not (res <= self.membership_tol):
            raise ContractError(
                f"{self.name}: coordinates violate membership (residual {res:.3e})"
            )
        return ManifoldPoint(coords, self)

    def _pt(self, coords) -> ManifoldPoint:
        return ManifoldPoint(_frozen(coords), self)

    def tangent(self, x: ManifoldPoint, coords) -> TangentVec:
        """Wrap coordinates as a tangent vector at x, enforcing tangency."""
        coords = _frozen(np.asarray(coords, dtype=float))
        if coords.shape != self.ambient_shape:
            raise ContractError(
                f"{self.name}: expected tangent coords of shape {self.ambient_shape}"
            )
        res = self.check_tangent(x, coords)
        if not (res <= max(self.tol_mem, 1e-8 * (1.0 + np.abs(coords).max()))):
            raise ContractError(f"{self.name}: coordinates are not tangent (residual {res:.3e})")
        return TangentVec(coords, x)

    def _tv(self, x: ManifoldPoint, coords) -> TangentVec:
        return TangentVec(_frozen(coords), x)

    def zero_tangent(self, x: ManifoldPoint) -> TangentVec:
        return self._tv(x, np.zeros(self.ambient_shape))

    # -- metric ----------------------------------------------------------

    def inner(self, x: ManifoldPoint, u: TangentVec, v: TangentVec) -> float:
        require_base(x, u)
        require_base(x, v)
        return float(self._inner(x.coords, u.coords, v.coords))

    def norm(self, x: ManifoldPoint, u: TangentVec) -> float:
        return float(np.sqrt(max(self.inner(x, u, u), 0.0)))

    def flat(self, x: ManifoldPoint, u: TangentVec) -> np.ndarray:
        """Ambient representation e of the covector <u, .>_x: <e, v> = inner(x, u, v)."""
        require_base(x, u)
        return self._flat(x.coords, u.coords)

    # -- maps --------------------------------------------------------------

    def exp(self, x: ManifoldPoint, u: TangentVec) -> ManifoldPoint:
        require_base(x, u)
        return self._pt(self._exp(x.coords, u.coords))

    def log(self, x: ManifoldPoint, y: ManifoldPoint) -> TangentVec:
        return self._tv(x, self._log(x.coords, y.coords))

    def dist(self, x: ManifoldPoint, y: ManifoldPoint) -> float:
        return self.norm(x, self.log(x, y))

    def retract(self, x: ManifoldPoint, u: TangentVec) -> ManifoldPoint:
        require_base(x, u)
        return self._pt(self._retract(x.coords, u.coords))

    def transport(self, frm: ManifoldPoint, to: ManifoldPoint, u: TangentVec) -> TangentVec:
        require_base(frm, u)
        if same_point(frm, to):
            return self._tv(to, u.coords)
        return self._tv(to, self._transport(frm.coords, to.coords, u.coords))

    def proj(self, x: ManifoldPoint, a) -> TangentVec:
        a = np.asarray(a, dtype=float)
        if a.shape != self.ambient_shape:
            raise ContractError(f"{self.name}: ambient array has wrong shape {a.shape}")
        return self._tv(x, self._proj(x.coords, a))

    def egrad_to_rgrad(self, x: ManifoldPoint, eg) -> TangentVec:
        return self._tv(x, self._egrad_to_rgrad(x.coords, np.asarray(eg, dtype=float)))

    def ehess_to_rhess(self, x: ManifoldPoint, eg, ehess_u, u: TangentVec) -> TangentVec:
        require_base(x, u)
        return self._tv(
            x,
            self._ehess_to_rhess(
                x.coords,
                np.asarray(eg, dtype=float),
                np.asarray(ehess_u, dtype=float),
                u.coords,
            ),
        )

    def curve(self, x: ManifoldPoint, u: TangentVec, t: float) -> ManifoldPoint:
        """Point at parameter t along the exponential curve, or the retraction
        curve on manifolds without an exponential map."""
        step = t * u
        return self.exp(x, step) if self.has_exp else self.retract(x, step)

    # -- randomness and hygiene -------------------------------------------

    def rand_point(self, rng: np.random.Generator) -> ManifoldPoint:
        raise NotImplementedError

    def rand_tangent(self, x: ManifoldPoint, rng: np.random.Generator) -> TangentVec:
        raise NotImplementedError

    def check_point(self, coords: np.ndarray) -> float:
        """Membership residual; a valid point has residual <= membership_tol."""
        raise NotImplementedError

    def check_tangent(self, x: ManifoldPoint, coords: np.ndarray) -> float:
        """Tangency residual at x."""
        raise NotImplementedError

    def normalize_point(self, coords: np.ndarray) -> np.ndarray:
        """One re-normalization pass to control floating-point drift."""
        return np.asarray(coords, dtype=float)

    def tangent_basis(self, x: ManifoldPoint) -> list[TangentVec]:
        """Orthonormal tangent basis at x under the Riemannian metric.

        Built by projecting canonical ambient directions and running modified
        Gram-Schmidt; intended for small dimensions (finite-difference oracles
        and gradient checks).
        """
        basis: list[TangentVec] = []
        for cand in self._ambient_directions():
            v = self.proj(x, cand)
            for b in basis:
                v = v - self.inner(x, v, b) * b
            nrm = self.norm(x, v)
            if nrm > 1e-9:
                basis.append((1.0 / nrm) * v)
            if len(basis) == self.dim:
                break
        if len(basis) != self.dim:
            raise ContractError(
                f"{self.name}: tangent basis construction found {len(basis)} of {self.dim} directions"
            )
        return basis

    def _ambient_directions(self):
        idx = np.ndindex(*self.ambient_shape)
        for ij in idx:
            e = np.zeros(self.ambient_shape)
            e[ij] = 1.0
            yield e

    # -- raw kernels (implemented by concrete manifolds) -------------------

    def _inner(self, x, u, v) -> float:
        raise NotImplementedError

    def _flat(self, x, u) -> np.ndarray:
        raise NotImplementedError

    def _exp(self, x, u) -> np.ndarray:
        raise UnsupportedOperationError(f"{self.name} has no exponential map")

    def _log(self, x, y) -> np.ndarray:
        raise UnsupportedOperationError(f"{self.name} has no logarithm map")

    def _retract(self, x, u) -> np.ndarray:
        raise NotImplementedError

    def _transport(self, frm, to, u) -> np.ndarray:
        raise NotImplementedError

    def _proj(self, x, a) -> np.ndarray:
        raise NotImplementedError

    def _egrad_to_rgrad(self, x, eg) -> np.ndarray:
        raise NotImplementedError

    def _ehess_to_rhess(self, x, eg, ehess_u, u) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self) -> str:
        return self.name


class ProductManifold(Manifold):
    """Cartesian product of manifolds; coordinates are flattened end to end.

    Every operation acts component-wise and the metric is the sum of the
    component metrics.
    """

    def __init__(self, components: Sequence[Manifold]):
        if not components:
            raise ContractError("product of zero manifolds")
        self.components = tuple(components)
        self._sizes = [int(np.prod(m.ambient_shape)) for m in self.components]
        self._offsets = np.cumsum([0] + self._sizes)
        self.has_exp = all(m.has_exp for m in self.components)
        self.has_log = all(m.has_log for m in self.components)
        self.has_isometric_transport = all(
            m.has_isometric_transport for m in self.components
        )

    @property
    def name(self) -> str:
        return " x ".join(m.name for m in self.components)

    @property
    def dim(self) -> int:
        return sum(m.dim for m in self.components)

    @property
    def ambient_shape(self) -> tuple:
        return (int(self._offsets[-1]),)

    def _signature(self) -> tuple:
        return tuple(self.components)

    def split(self, flat: np.ndarray) -> list[np.ndarray]:
        return [
            flat[self._offsets[i]: self._offsets[i + 1]].reshape(m.ambient_shape)
            for i, m in enumerate(self.components)
        ]

    def join(self, parts: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])

    def _map_pointwise(self, fn, *flats):
        parts = [self.split(np.asarray(f, dtype=float)) for f in flats]
        out = [fn(m, *(p[i] for p in parts)) for i, m in enumerate(self.components)]
        return out

    def _inner(self, x, u, v):
        vals = self._map_pointwise(
            lambda m, xc, uc, vc: m._inner(xc, uc, vc), x, u, v
        )
        return float(sum(vals))

    def _flat(self, x, u):
        return self.join(self._map_pointwise(lambda m, xc, uc: m._flat(xc, uc), x, u))

    def _exp(self, x, u):
        return self.join(self._map_pointwise(lambda m, xc, uc: m._exp(xc, uc), x, u))

    def _log(self, x, y):
        return self.join(self._map_pointwise(lambda m, xc, yc: m._log(xc, yc), x, y))

    def _retract(self, x, u):
        return self.join(self._map_pointwise(lambda m, xc, uc: m._retract(xc, uc), x, u))

    def _transport(self, frm, to, u):
        return self.join(
            self._map_pointwise(
                lambda m, fc, tc, uc: m._transport(fc, tc, uc), frm, to, u
            )
        )

    def _proj(self, x, a):
        return self.join(self._map_pointwise(lambda m, xc, ac: m._proj(xc, ac), x, a))

    def _egrad_to_rgrad(self, x, eg):
        return self.join(
            self._map_pointwise(lambda m, xc, gc: m._egrad_to_rgrad(xc, gc), x, eg)
        )

    def _ehess_to_rhess(self, x, eg, ehess_u, u):
        return self.join(
            self._map_pointwise(
                lambda m, xc, gc, hc, uc: m._ehess_to_rhess(xc, gc, hc, uc),
                x, eg, ehess_u, u,
            )
        )

    def rand_point(self, rng):
        return self._pt(self.join([m.rand_point(rng).coords for m in self.components]))

    def rand_tangent(self, x, rng):
        parts = self.split(x.coords)
        coords = self.join(
            [
                m.rand_tangent(m._pt(parts[i]), rng).coords
                for i, m in enumerate(self.components)
            ]
        )
        return self._tv(x, coords)

    def check_point(self, coords):
        parts = self.split(np.asarray(coords, dtype=float))
        return max(m.check_point(p) for m, p in zip(self.components, parts))

    def check_tangent(self, x, coords):
        xp = self.split(x.coords)
        parts = self.split(np.asarray(coords, dtype=float))
        return max(
            m.check_tangent(m._pt(xi), p)
            for m, xi, p in zip(self.components, xp, parts)
        )

    def normalize_point(self, coords):
        parts = self.split(np.asarray(coords, dtype=float))
        return self.join(
            [m.normalize_point(p) for m, p in zip(self.components, parts)]
        )

    @property
    def membership_tol(self) -> float:
        return max(m.membership_tol for m in self.components)


def product(manifolds: Sequence[Manifold]) -> ProductManifold:
    """Cartesian product manifold with component-wise operations."""
    return ProductManifold(manifolds)
