"""Concrete matrix manifolds: Euclidean, SPD, Stiefel, doubly stochastic.

SPD carries the affine-invariant metric, Stiefel the embedded Euclidean
metric with QR retraction, and the doubly stochastic manifold the Fisher
information metric with a Sinkhorn-based retraction.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import ContractError, NumericError, UnsupportedOperationError
from .geometry import Manifold, ManifoldPoint, TangentVec
from .linalg import (
    dlogm_spd,
    expm_sym,
    logm_spd,
    sinkhorn,
    sqrt_invsqrt_spd,
    sym,
)


class Euclidean(Manifold):
    """Flat space of a fixed array shape; all maps are trivial."""

    def __init__(self, shape):
        if isinstance(shape, int):
            shape = (shape,)
        self.shape = tuple(int(s) for s in shape)

    @property
    def name(self):
        return f"euclidean{self.shape}"

    @property
    def dim(self):
        return int(np.prod(self.shape))

    @property
    def ambient_shape(self):
        return self.shape

    def _signature(self):
        return self.shape

    def _inner(self, x, u, v):
        return float(np.sum(u * v))

    def _flat(self, x, u):
        return u.copy()

    def _exp(self, x, u):
        return x + u

    def _log(self, x, y):
        return y - x

    def _retract(self, x, u):
        return x + u

    def _transport(self, frm, to, u):
        return u.copy()

    def _proj(self, x, a):
        return a.copy()

    def _egrad_to_rgrad(self, x, eg):
        return eg.copy()

    def _ehess_to_rhess(self, x, eg, ehess_u, u):
        return ehess_u.copy()

    def rand_point(self, rng):
        return self._pt(rng.standard_normal(self.shape))

    def rand_tangent(self, x, rng):
        return self._tv(x, rng.standard_normal(self.shape))

    def check_point(self, coords):
        return 0.0

    def check_tangent(self, x, coords):
        return 0.0


class Spd(Manifold):
    """Symmetric positive-definite matrices with the affine-invariant metric.

    inner_X(U, V) = tr(X^-1 U X^-1 V); Exp_X(U) = X^(1/2) expm(X^(-1/2) U
    X^(-1/2)) X^(1/2) (the symmetrized form of X expm(X^-1 U)); parallel
    transport is E U E^T with E = (Y X^-1)^(1/2). The retraction is the
    exponential map itself.
    """

    def __init__(self, n: int, eig_floor: float = 1e-12):
        self.n = int(n)
        self.eig_floor = float(eig_floor)

    @property
    def name(self):
        return f"spd({self.n})"

    @property
    def dim(self):
        return self.n * (self.n + 1) // 2

    @property
    def ambient_shape(self):
        return (self.n, self.n)

    def _signature(self):
        return (self.n, self.eig_floor)

    def _solve(self, x, b):
        try:
            c = sla.cho_factor(x, lower=True, check_finite=False)
        except sla.LinAlgError as exc:
            w = np.linalg.eigvalsh(sym(x))
            raise NumericError(
                f"{self.name}: point is numerically singular (min eigenvalue {w.min():.3e})",
                min_eigenvalue=float(w.min()),
                condition=float(w.max() / max(w.min(), 1e-300)),
            ) from exc
        return sla.cho_solve(c, b, check_finite=False)

    def _inner(self, x, u, v):
        xu = self._solve(x, u)
        xv = self._solve(x, v)
        return float(np.sum(xu * xv.T))

    def _flat(self, x, u):
        xu = self._solve(x, u)          # X^-1 U
        return sym(self._solve(x, xu.T).T)  # X^-1 U X^-1

    def _exp(self, x, u):
        s, isq = sqrt_invsqrt_spd(x)
        inner = sym(isq @ u @ isq)
        return sym(s @ expm_sym(inner) @ s)

    def _log(self, x, y):
        s, isq = sqrt_invsqrt_spd(x)
        inner = logm_spd(sym(isq @ y @ isq))
        return sym(s @ inner @ s)

    def dist(self, x: ManifoldPoint, y: ManifoldPoint) -> float:
        _, isq = sqrt_invsqrt_spd(x.coords)
        w = np.linalg.eigvalsh(sym(isq @ y.coords @ isq))
        if w.min() <= 0.0:
            raise NumericError(
                f"{self.name}: dist target not positive definite",
                min_eigenvalue=float(w.min()),
            )
        return float(np.sqrt(np.sum(np.log(w) ** 2)))

    def _retract(self, x, u):
        return self._exp(x, u)

    def _transport(self, frm, to, u):
        # E = (to frm^-1)^(1/2), computed through the similarity
        # (to frm^-1)^(1/2) = to^(1/2) (to^(1/2) frm^-1 to^(1/2))^(1/2) to^(-1/2).
        sf, isf = sqrt_invsqrt_spd(to)
        inner = sym(sf @ np.linalg.solve(frm, sf))
        inner_sqrt, _ = sqrt_invsqrt_spd(inner)
        e = sf @ inner_sqrt @ isf
        return sym(e @ u @ e.T)

    def _proj(self, x, a):
        return sym(a)

    def _egrad_to_rgrad(self, x, eg):
        return sym(x @ sym(eg) @ x)

    def _ehess_to_rhess(self, x, eg, ehess_u, u):
        return sym(x @ sym(ehess_u) @ x) + sym(u @ sym(eg) @ x)

    def rand_point(self, rng):
        g = rng.standard_normal((self.n, self.n))
        return self._pt(sym(g @ g.T / self.n + 0.25 * np.eye(self.n)))

    def rand_tangent(self, x, rng):
        return self._tv(x, sym(rng.standard_normal((self.n, self.n))))

    def check_point(self, coords):
        coords = np.asarray(coords, dtype=float)
        scale = 1.0 + np.abs(coords).max()
        res = np.abs(coords - coords.T).max() / scale
        w = np.linalg.eigvalsh(sym(coords))
        if w.min() <= self.eig_floor:
            return np.inf
        return float(res)

    def check_tangent(self, x, coords):
        coords = np.asarray(coords, dtype=float)
        scale = 1.0 + np.abs(coords).max()
        return float(np.abs(coords - coords.T).max() / scale)

    def normalize_point(self, coords):
        return sym(np.asarray(coords, dtype=float))

    def _ambient_directions(self):
        # Symmetric canonical directions: diagonal units then symmetrized pairs.
        for i in range(self.n):
            e = np.zeros((self.n, self.n))
            e[i, i] = 1.0
            yield e
        inv = 1.0 / np.sqrt(2.0)
        for i in range(self.n):
            for j in range(i + 1, self.n):
                e = np.zeros((self.n, self.n))
                e[i, j] = inv
                e[j, i] = inv
                yield e


def qf(a: np.ndarray) -> np.ndarray:
    """Q factor of the thin QR decomposition, with nonnegative R diagonal."""
    q, r = np.linalg.qr(a)
    d = np.diag(r)
    scale = np.abs(a).max() if a.size else 1.0
    if np.abs(d).min() <= 1e-12 * max(1.0, scale):
        raise NumericError(
            "QR retraction hit a rank-deficient matrix",
            min_r_diagonal=float(np.abs(d).min()),
        )
    s = np.where(d < 0.0, -1.0, 1.0)
    return q * s


class Stiefel(Manifold):
    """Orthonormal d x r frames with the embedded Euclidean metric.

    Uses the QR retraction qf(X + U); no exponential/logarithm maps are
    provided, and transport is the tangent projection of the moved
    coordinates (a vector transport, not an isometry).
    """

    has_exp = False
    has_log = False
    has_isometric_transport = False

    def __init__(self, d: int, r: int):
        if d < r:
            raise ContractError(f"stiefel requires d >= r, got ({d}, {r})")
        self.d = int(d)
        self.r = int(r)

    @property
    def name(self):
        return f"stiefel({self.d},{self.r})"

    @property
    def dim(self):
        return self.d * self.r - self.r * (self.r + 1) // 2

    @property
    def ambient_shape(self):
        return (self.d, self.r)

    def _signature(self):
        return (self.d, self.r)

    def _inner(self, x, u, v):
        return float(np.sum(u * v))

    def _flat(self, x, u):
        return u.copy()

    def _retract(self, x, u):
        return qf(x + u)

    def _transport(self, frm, to, u):
        return self._proj(to, u)

    def _proj(self, x, a):
        return a - x @ sym(x.T @ a)

    def _egrad_to_rgrad(self, x, eg):
        return self._proj(x, eg)

    def _ehess_to_rhess(self, x, eg, ehess_u, u):
        return self._proj(x, ehess_u - u @ sym(x.T @ eg))

    def rand_point(self, rng):
        return self._pt(qf(rng.standard_normal((self.d, self.r))))

    def rand_tangent(self, x, rng):
        return self._tv(x, self._proj(x.coords, rng.standard_normal((self.d, self.r))))

    def check_point(self, coords):
        coords = np.asarray(coords, dtype=float)
        return float(np.linalg.norm(coords.T @ coords - np.eye(self.r)))

    def check_tangent(self, x, coords):
        return float(np.linalg.norm(sym(x.coords.T @ np.asarray(coords, dtype=float))))

    def normalize_point(self, coords):
        return qf(np.asarray(coords, dtype=float))


class DoublyStochastic(Manifold):
    """Positive matrices with fixed row/column marginals, Fisher metric.

    inner_G(U, V) = sum_ij U_ij V_ij / G_ij. The retraction rescales
    G * exp(U / G) back to the marginals with Sinkhorn iterations; it is used
    as the exponential map as well, and the logarithm below is its exact
    inverse (a single linear solve), so exp/log round-trip by construction.
    The induced dist is therefore a chart distance: symmetric only up to
    second order in the separation.
    """

    has_isometric_transport = False
    exp_is_chart = True

    def __init__(
        self,
        n_rows: int,
        n_cols: int,
        row_marginal=None,
        col_marginal=None,
        sinkhorn_tol: float = 1e-10,
        sinkhorn_max_iters: int = 10000,
    ):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        mu = (
            np.full(self.n_rows, 1.0 / self.n_rows)
            if row_marginal is None
            else np.asarray(row_marginal, dtype=float).ravel()
        )
        nu = (
            np.full(self.n_cols, 1.0 / self.n_cols)
            if col_marginal is None
            else np.asarray(col_marginal, dtype=float).ravel()
        )
        if mu.size != self.n_rows or nu.size != self.n_cols:
            raise ContractError("marginal sizes do not match the matrix shape")
        if mu.min() <= 0.0 or nu.min() <= 0.0:
            raise ContractError("marginals must be positive")
        if abs(mu.sum() - nu.sum()) > 1e-12 * max(1.0, mu.sum()):
            raise ContractError("marginals must carry equal total mass")
        self.mu = mu
        self.nu = nu
        self.sinkhorn_tol = float(sinkhorn_tol)
        self.sinkhorn_max_iters = int(sinkhorn_max_iters)

    @property
    def name(self):
        return f"doubly_stochastic({self.n_rows},{self.n_cols})"

    @property
    def dim(self):
        return (self.n_rows - 1) * (self.n_cols - 1)

    @property
    def ambient_shape(self):
        return (self.n_rows, self.n_cols)

    def _signature(self):
        return (self.n_rows, self.n_cols, self.mu.tobytes(), self.nu.tobytes(),
                self.sinkhorn_tol, self.sinkhorn_max_iters)

    @property
    def membership_tol(self) -> float:
        return self.sinkhorn_tol

    def _inner(self, x, u, v):
        return float(np.sum(u * v / x))

    def _flat(self, x, u):
        return u / x

    def _scaling_solve(self, g, r, c):
        """Solve diag(rowsum) a + G b = r, G^T a + diag(colsum) b = c for (a, b).

        The system is rank deficient along (a, b) -> (a + t, b - t); the last
        entry of b is pinned to zero. Solved through the Schur complement on b.
        """
        rs = g.sum(axis=1)
        cs = g.sum(axis=0)
        m = np.diag(cs) - g.T @ (g / rs[:, None])
        rhs = c - g.T @ (r / rs)
        mm = m[:-1, :-1]
        b_head = np.linalg.solve(mm, rhs[:-1])
        b = np.concatenate([b_head, [0.0]])
        a = (r - g @ b) / rs
        return a, b

    def _proj(self, x, a):
        al, be = self._scaling_solve(x, a.sum(axis=1), a.sum(axis=0))
        return a - (al[:, None] + be[None, :]) * x

    def _retract(self, x, u):
        z = u / x
        if np.abs(z).max() > 500.0:
            raise NumericError(
                "doubly stochastic retraction overflow: tangent step too large "
                f"(max |U/G| = {np.abs(z).max():.3e})",
                max_log_step=float(np.abs(z).max()),
            )
        k = x * np.exp(z)
        try:
            res = sinkhorn(k, self.mu, self.nu, self.sinkhorn_tol, self.sinkhorn_max_iters)
        except NumericError as exc:
            raise NumericError(
                f"doubly stochastic retraction: {exc}", **exc.info
            ) from exc
        return res.matrix

    def _exp(self, x, u):
        return self._retract(x, u)

    def _log(self, x, y):
        if np.asarray(y).min() <= 0.0:
            raise ContractError("log target must be entrywise positive")
        return self._proj(x, x * np.log(y / x))

    def _transport(self, frm, to, u):
        return self._proj(to, u)

    def _egrad_to_rgrad(self, x, eg):
        return self._proj(x, eg * x)

    def _ehess_to_rhess(self, x, eg, ehess_u, u):
        # Riemannian Hessian under the Fisher metric on the marginal-constrained
        # affine subspace: project the ambient covariant derivative of the
        # Riemannian gradient field. The multiplier part of the gradient's
        # normal component differentiates into the (al, be) * U term.
        a = eg * x
        al, be = self._scaling_solve(x, a.sum(axis=1), a.sum(axis=0))
        rgrad = a - (al[:, None] + be[None, :]) * x
        raw = ehess_u * x + eg * u - (al[:, None] + be[None, :]) * u \
            - 0.5 * (u * rgrad) / x
        return self._proj(x, raw)

    def rand_point(self, rng):
        k = np.exp(0.5 * rng.standard_normal((self.n_rows, self.n_cols)))
        res = sinkhorn(k, self.mu, self.nu, self.sinkhorn_tol, self.sinkhorn_max_iters)
        return self._pt(res.matrix)

    def rand_tangent(self, x, rng):
        raw = rng.standard_normal((self.n_rows, self.n_cols)) * x.coords
        return self._tv(x, self._proj(x.coords, raw))

    def check_point(self, coords):
        coords = np.asarray(coords, dtype=float)
        if coords.min() <= 0.0:
            return np.inf
        return float(
            np.abs(coords.sum(axis=1) - self.mu).sum()
            + np.abs(coords.sum(axis=0) - self.nu).sum()
        )

    def check_tangent(self, x, coords):
        coords = np.asarray(coords, dtype=float)
        return float(
            np.abs(coords.sum(axis=1)).max(initial=0.0)
            + np.abs(coords.sum(axis=0)).max(initial=0.0)
        )

    def normalize_point(self, coords):
        res = sinkhorn(
            np.asarray(coords, dtype=float),
            self.mu,
            self.nu,
            self.sinkhorn_tol,
            self.sinkhorn_max_iters,
        )
        return res.matrix
