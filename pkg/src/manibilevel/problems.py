"""Bilevel problem abstraction and the concrete problem instances.

A problem exposes the upper/lower objectives plus every derivative action the
hypergradient estimators need: partial Riemannian gradients, the lower-level
Hessian as an operator, the mixed second-derivative operator together with its
adjoint, and (where tractable) an analytic Hessian inverse. Stochastic
problems additionally evaluate everything on mini-batch index sets; the full
index set reproduces the deterministic values exactly.
"""

from __future__ import annotations

import warnings
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ContractError
from .geometry import LinearMapAction, Manifold, ManifoldPoint, TangentVec
from .linalg import (
    dlogm_spd,
    logm_spd,
    lyapunov_solve,
    sqrt_invsqrt_spd,
    sqrtm_spd,
    sunvec,
    svec,
    svec_dim,
    sym,
)
from .manifolds import DoublyStochastic, Euclidean, Spd, Stiefel, qf


class BilevelProblem:
    """Interface consumed by the estimators and solvers.

    ``fidx`` arguments select upper-level (validation) samples, ``gidx``
    lower-level (training) samples; ``None`` means the full dataset. Problems
    with a single sample are deterministic and reject explicit index sets.
    """

    upper_manifold: Manifold
    lower_manifold: Manifold
    n_upper_samples: int = 1
    n_lower_samples: int = 1
    is_minmax: bool = False

    @property
    def is_stochastic(self) -> bool:
        return self.n_upper_samples > 1 or self.n_lower_samples > 1

    def _reject_batch(self, idx):
        if idx is not None:
            raise ContractError("this problem is deterministic; batch sampling is not available")

    def f(self, x: ManifoldPoint, y: ManifoldPoint, fidx=None) -> float:
        raise NotImplementedError

    def g(self, x: ManifoldPoint, y: ManifoldPoint, gidx=None) -> float:
        raise NotImplementedError

    def grad_x_f(self, x, y, fidx=None) -> TangentVec:
        raise NotImplementedError

    def grad_y_f(self, x, y, fidx=None) -> TangentVec:
        raise NotImplementedError

    def grad_y_g(self, x, y, gidx=None) -> TangentVec:
        raise NotImplementedError

    def hess_y_g(self, x, y, gidx=None) -> LinearMapAction:
        raise NotImplementedError

    def cross_xy_g(self, x, y, gidx=None) -> LinearMapAction:
        """Mixed second derivative as an operator from lower tangents to upper
        tangents; ``adjoint_apply`` is the reverse-direction operator."""
        raise NotImplementedError

    def hess_inv_y_g(self, x, y, gidx=None) -> LinearMapAction | None:
        return None


@dataclass(frozen=True)
class Batches:
    """Index sets for one stochastic outer iteration.

    ``inner`` feeds the lower-level gradient steps, ``upper`` the upper
    objective's derivatives, ``cross`` the mixed derivative, and ``hess`` the
    lower-level Hessian (inverse).
    """

    inner: np.ndarray
    upper: np.ndarray
    cross: np.ndarray
    hess: np.ndarray


def draw_indices(size: int, population: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform-with-replacement index draw.

    A requested size equal to the population switches to full enumeration
    (exact averages, no randomness consumed), which makes full-batch
    stochastic runs reproduce deterministic runs bitwise.
    """
    if size == population:
        return np.arange(population)
    return rng.integers(0, population, size=int(size))


def sample_batches(problem: BilevelProblem, sizes, rng: np.random.Generator) -> Batches:
    """Draw the four per-iteration batches, uniformly with replacement."""
    if not problem.is_stochastic:
        raise ContractError("batch sampling requested on a deterministic problem")
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 4 or min(sizes) < 1:
        raise ContractError("batch_sizes must be four integers >= 1")
    return Batches(
        inner=draw_indices(sizes[0], problem.n_lower_samples, rng),
        upper=draw_indices(sizes[1], problem.n_upper_samples, rng),
        cross=draw_indices(sizes[2], problem.n_lower_samples, rng),
        hess=draw_indices(sizes[3], problem.n_lower_samples, rng),
    )


# ---------------------------------------------------------------------------
# Euclidean quadratic sanity oracle
# ---------------------------------------------------------------------------


class QuadraticOracle(BilevelProblem):
    """g(x, y) = 0.5 (y - A x)' H0 (y - A x), f(x, y) = 0.5 ||y||^2.

    The lower solution is y*(x) = A x for any positive definite H0, so the
    hypergradient is A'A x in closed form regardless of the curvature; this is
    the reference problem for estimator exactness.
    """

    def __init__(self, a: np.ndarray, *, curvature: np.ndarray | None = None):
        a = np.asarray(a, dtype=float)
        if a.ndim != 2:
            raise ContractError("A must be a matrix")
        self.a = a
        dy, dx = a.shape
        self.upper_manifold = Euclidean((dx,))
        self.lower_manifold = Euclidean((dy,))
        h0 = np.eye(dy) if curvature is None else sym(np.asarray(curvature, dtype=float))
        if np.linalg.eigvalsh(h0).min() <= 0:
            raise ContractError("curvature must be positive definite")
        self.h0 = h0

    def exact_hypergrad(self, x: ManifoldPoint) -> TangentVec:
        return self.upper_manifold._tv(x, self.a.T @ (self.a @ x.coords))

    def lower_solution(self, x: ManifoldPoint) -> ManifoldPoint:
        return self.lower_manifold._pt(self.a @ x.coords)

    def f(self, x, y, fidx=None):
        self._reject_batch(fidx)
        return 0.5 * float(np.dot(y.coords, y.coords))

    def g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        r = y.coords - self.a @ x.coords
        return 0.5 * float(r @ self.h0 @ r)

    def grad_x_f(self, x, y, fidx=None):
        self._reject_batch(fidx)
        return self.upper_manifold.zero_tangent(x)

    def grad_y_f(self, x, y, fidx=None):
        self._reject_batch(fidx)
        return self.lower_manifold._tv(y, y.coords.copy())

    def grad_y_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        return self.lower_manifold._tv(y, self.h0 @ (y.coords - self.a @ x.coords))

    def hess_y_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        my = self.lower_manifold
        apply = lambda v: my._tv(y, self.h0 @ v.coords)
        return LinearMapAction(apply, apply, y, y)

    def cross_xy_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        mx, my = self.upper_manifold, self.lower_manifold
        return LinearMapAction(
            apply=lambda v: mx._tv(x, -self.a.T @ (self.h0 @ v.coords)),
            adjoint_apply=lambda u: my._tv(y, -self.h0 @ (self.a @ u.coords)),
            domain_base=y,
            codomain_base=x,
        )

    def hess_inv_y_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        my = self.lower_manifold
        solve = lambda v: my._tv(y, np.linalg.solve(self.h0, v.coords))
        return LinearMapAction(solve, solve, y, y)


def quadratic_oracle_problem(a, *, curvature=None) -> QuadraticOracle:
    return QuadraticOracle(a, curvature=curvature)


# ---------------------------------------------------------------------------
# Synthetic similarity alignment on Stiefel x SPD
# ---------------------------------------------------------------------------


class SyntheticStiefelSpd(BilevelProblem):
    """Trace-similarity alignment between two datasets.

    The upper variable W on Stiefel(d, r) maximizes tr(M* X'Y W'); the library
    minimizes the negated trace. The lower variable M on SPD(d) minimizes
    <M, X'X> + <M^-1, W Y'Y W' + nu I>, which is geodesically strongly convex
    for any SPD M and has a Lyapunov-solvable Hessian.
    """

    def __init__(self, x_data: np.ndarray, y_data: np.ndarray, nu: float):
        x_data = np.asarray(x_data, dtype=float)
        y_data = np.asarray(y_data, dtype=float)
        n, d = x_data.shape
        n2, r = y_data.shape
        if n2 != n or not (n >= d >= r):
            raise ContractError("need X (n x d), Y (n x r) with n >= d >= r")
        if nu <= 0:
            raise ContractError("nu must be positive")
        self.nu = float(nu)
        self.xtx = sym(x_data.T @ x_data)
        self.xty = x_data.T @ y_data
        self.yty = sym(y_data.T @ y_data)
        w = np.linalg.eigvalsh(self.xtx)
        if w.min() < 1e-10 * max(w.max(), 1.0):
            warnings.warn(
                "X is numerically rank deficient; the lower-level strong "
                "convexity constant may vanish",
                RuntimeWarning,
            )
        self.upper_manifold = Stiefel(d, r)
        self.lower_manifold = Spd(d)

    def _b(self, w_coords):
        d = self.xtx.shape[0]
        return sym(w_coords @ self.yty @ w_coords.T) + self.nu * np.eye(d)

    def lower_solution(self, x: ManifoldPoint) -> ManifoldPoint:
        """Closed-form stationary point of M A M = B (test oracle)."""
        a_sqrt, a_isqrt = sqrt_invsqrt_spd(self.xtx)
        mid = sqrtm_spd(sym(a_sqrt @ self._b(x.coords) @ a_sqrt))
        return self.lower_manifold._pt(sym(a_isqrt @ mid @ a_isqrt))

    def f(self, x, y, fidx=None):
        self._reject_batch(fidx)
        return -float(np.trace(y.coords @ self.xty @ x.coords.T))

    def g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        m = y.coords
        return float(np.sum(m * self.xtx) + np.sum(np.linalg.inv(m) * self._b(x.coords)))

    def grad_x_f(self, x, y, fidx=None):
        self._reject_batch(fidx)
        return self.upper_manifold.egrad_to_rgrad(x, -y.coords @ self.xty)

    def grad_y_f(self, x, y, fidx=None):
        self._reject_batch(fidx)
        m = y.coords
        c = sym(self.xty @ x.coords.T)
        return self.lower_manifold._tv(y, -sym(m @ c @ m))

    def grad_y_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        m = y.coords
        return self.lower_manifold._tv(y, sym(m @ self.xtx @ m) - self._b(x.coords))

    def hess_y_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        m = y.coords
        a = self.xtx
        m_inv_b = np.linalg.solve(m, self._b(x.coords))

        def apply(v):
            vc = v.coords
            out = 0.5 * (vc @ a @ m + m @ a @ vc + vc @ m_inv_b + m_inv_b.T @ vc)
            return self.lower_manifold._tv(y, sym(out))

        return LinearMapAction(apply, apply, y, y)

    def hess_inv_y_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        m = y.coords
        m_sqrt, m_isqrt = sqrt_invsqrt_spd(m)
        s = sym(m_sqrt @ self.xtx @ m_sqrt) + sym(m_isqrt @ self._b(x.coords) @ m_isqrt)

        def apply(v):
            rhs = 2.0 * sym(m_isqrt @ v.coords @ m_isqrt)
            gsol = lyapunov_solve(s, rhs)
            return self.lower_manifold._tv(y, sym(m_sqrt @ gsol @ m_sqrt))

        return LinearMapAction(apply, apply, y, y)

    def cross_xy_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        w = x.coords
        m = y.coords
        wyy = w @ self.yty

        def apply(v):
            m_inv_v = np.linalg.solve(m, v.coords)
            eg = -2.0 * m_inv_v @ np.linalg.solve(m, wyy)
            return self.upper_manifold.egrad_to_rgrad(x, eg)

        def adjoint(u):
            uc = u.coords
            return self.lower_manifold._tv(y, -(uc @ wyy.T + wyy @ uc.T))

        return LinearMapAction(apply, adjoint, y, x)


def synthetic_stiefel_spd_problem(x_data, y_data, nu) -> SyntheticStiefelSpd:
    return SyntheticStiefelSpd(x_data, y_data, nu)


def make_synthetic_data(n: int, d: int, r: int, seed: int, spectral_scale: float = 0.6):
    """Gaussian data matrices rescaled to a fixed spectral norm.

    The rescaling keeps the lower-level Hessian spectrum inside the window
    where a unit Neumann damping converges; raw standard Gaussian entries at
    the published sizes put the spectral bound in the hundreds.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    y = rng.standard_normal((n, r))
    x *= spectral_scale / np.linalg.norm(x, 2)
    y *= spectral_scale / np.linalg.norm(y, 2)
    return x, y


# ---------------------------------------------------------------------------
# Shallow hyper-representation: ridge regression over SPD embeddings
# ---------------------------------------------------------------------------


class HyperRepRegression(BilevelProblem):
    """Ridge regression on svec(logm(W' A_i W)) features.

    The upper variable W on Stiefel(d, r) is scored by validation loss at the
    ridge solution beta*(W); the lower variable beta lives in R^{r(r+1)/2}.
    Both levels are sample averages, so every derivative has a mini-batch
    variant; the full index set reproduces the deterministic values.
    """

    def __init__(self, mats, targets, train_idx, val_idx, r: int, lam: float):
        self.mats = [np.asarray(a, dtype=float) for a in mats]
        self.targets = np.asarray(targets, dtype=float).ravel()
        if lam <= 0:
            raise ContractError("lam must be positive")
        if len(self.mats) != self.targets.size:
            raise ContractError("one target per data matrix required")
        self.lam = float(lam)
        self.train_idx = np.asarray(train_idx, dtype=int)
        self.val_idx = np.asarray(val_idx, dtype=int)
        d = self.mats[0].shape[0]
        for a in self.mats:
            if a.shape != (d, d):
                raise ContractError("all data matrices must share one shape")
        self.d = d
        self.r = int(r)
        self.p = svec_dim(self.r)
        self.upper_manifold = Stiefel(d, self.r)
        self.lower_manifold = Euclidean((self.p,))
        self.n_upper_samples = len(self.val_idx)
        self.n_lower_samples = len(self.train_idx)
        self._cache: OrderedDict = OrderedDict()

    # -- feature pipeline --------------------------------------------------

    def _features(self, x: ManifoldPoint):
        """Per-sample embeddings at W: eigendecompositions of W'A_iW and svec
        features, cached on the point coordinates."""
        key = x.coords.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        w = x.coords
        eigs = []
        feats = np.empty((len(self.mats), self.p))
        for i, a in enumerate(self.mats):
            c = sym(w.T @ a @ w)
            vals, vecs = np.linalg.eigh(c)
            if vals.min() <= 0:
                from .errors import NumericError

                raise NumericError(
                    "W'AW lost positive definiteness",
                    min_eigenvalue=float(vals.min()),
                    sample=i,
                )
            eigs.append((vals, vecs))
            feats[i] = svec(sym((vecs * np.log(vals)) @ vecs.T))
        entry = (feats, eigs)
        self._cache[key] = entry
        if len(self._cache) > 4:
            self._cache.popitem(last=False)
        return entry

    def _dlog(self, eig, e):
        """Frechet derivative of logm at a cached eigendecomposition."""
        vals, vecs = eig
        lw = np.log(vals)
        diff = vals[:, None] - vals[None, :]
        near = np.abs(diff) < 1e-12 * max(1.0, vals.max())
        denom = np.where(near, 1.0, diff)
        table = np.where(near, 2.0 / (vals[:, None] + vals[None, :]),
                         (lw[:, None] - lw[None, :]) / denom)
        et = vecs.T @ sym(e) @ vecs
        return sym(vecs @ (table * et) @ vecs.T)

    def _g_idx(self, gidx):
        return self.train_idx if gidx is None else self.train_idx[np.asarray(gidx, dtype=int)]

    def _f_idx(self, fidx):
        return self.val_idx if fidx is None else self.val_idx[np.asarray(fidx, dtype=int)]

    # -- objectives ---------------------------------------------------------

    def f(self, x, y, fidx=None):
        idx = self._f_idx(fidx)
        feats, _ = self._features(x)
        e = feats[idx] @ y.coords - self.targets[idx]
        return 0.5 * float(np.mean(e**2))

    def g(self, x, y, gidx=None):
        idx = self._g_idx(gidx)
        feats, _ = self._features(x)
        e = feats[idx] @ y.coords - self.targets[idx]
        return 0.5 * float(np.mean(e**2)) + 0.5 * self.lam * float(y.coords @ y.coords)

    # -- first order ---------------------------------------------------------

    def grad_y_f(self, x, y, fidx=None):
        idx = self._f_idx(fidx)
        feats, _ = self._features(x)
        phi = feats[idx]
        e = phi @ y.coords - self.targets[idx]
        return self.lower_manifold._tv(y, phi.T @ e / len(idx))

    def grad_y_g(self, x, y, gidx=None):
        idx = self._g_idx(gidx)
        feats, _ = self._features(x)
        phi = feats[idx]
        e = phi @ y.coords - self.targets[idx]
        return self.lower_manifold._tv(y, phi.T @ e / len(idx) + self.lam * y.coords)

    def _w_gradient(self, x, y, idx, vec_left, beta_like):
        """Euclidean W-gradient of (1/n) sum_i a_i * (phi_i' b_i) terms.

        For each sample the contribution is 2 A_i W Dlogm(C_i)[sunvec(s_i)]
        where s_i collects the svec-space coefficients.
        """
        feats, eigs = self._features(x)
        w = x.coords
        out = np.zeros_like(w)
        for i, s_vec in zip(idx, vec_left):
            gmat = self._dlog(eigs[i], sunvec(s_vec, self.r))
            out += 2.0 * self.mats[i] @ w @ gmat
        return out / len(idx)

    def grad_x_f(self, x, y, fidx=None):
        idx = self._f_idx(fidx)
        feats, _ = self._features(x)
        phi = feats[idx]
        e = phi @ y.coords - self.targets[idx]
        coeffs = [e_i * y.coords for e_i in e]
        eg = self._w_gradient(x, y, idx, coeffs, y.coords)
        return self.upper_manifold.egrad_to_rgrad(x, eg)

    # -- second order ---------------------------------------------------------

    def _ridge_matrix(self, x, idx):
        feats, _ = self._features(x)
        phi = feats[idx]
        return phi.T @ phi / len(idx) + self.lam * np.eye(self.p)

    def hess_y_g(self, x, y, gidx=None):
        idx = self._g_idx(gidx)
        h = self._ridge_matrix(x, idx)
        my = self.lower_manifold
        apply = lambda v: my._tv(y, h @ v.coords)
        return LinearMapAction(apply, apply, y, y)

    def hess_inv_y_g(self, x, y, gidx=None):
        idx = self._g_idx(gidx)
        h = self._ridge_matrix(x, idx)
        my = self.lower_manifold
        solve = lambda v: my._tv(y, np.linalg.solve(h, v.coords))
        return LinearMapAction(solve, solve, y, y)

    def lower_solution(self, x: ManifoldPoint) -> ManifoldPoint:
        """Closed-form ridge solution on the full training set (test oracle)."""
        feats, _ = self._features(x)
        phi = feats[self.train_idx]
        n = len(self.train_idx)
        h = phi.T @ phi / n + self.lam * np.eye(self.p)
        rhs = phi.T @ self.targets[self.train_idx] / n
        return self.lower_manifold._pt(np.linalg.solve(h, rhs))

    def cross_xy_g(self, x, y, gidx=None):
        idx = self._g_idx(gidx)
        feats, eigs = self._features(x)
        phi = feats[idx]
        e = phi @ y.coords - self.targets[idx]
        w = x.coords
        beta = y.coords

        def apply(v):
            coeffs = [e_i * v.coords + float(phi_i @ v.coords) * beta
                      for e_i, phi_i in zip(e, phi)]
            eg = self._w_gradient(x, y, idx, coeffs, None)
            return self.upper_manifold.egrad_to_rgrad(x, eg)

        def adjoint(u):
            uc = u.coords
            out = np.zeros(self.p)
            for pos, i in enumerate(idx):
                e_mat = 2.0 * sym(w.T @ self.mats[i] @ uc)
                dphi = svec(self._dlog(eigs[i], e_mat))
                out += e[pos] * dphi + float(dphi @ beta) * phi[pos]
            return self.lower_manifold._tv(y, out / len(idx))

        return LinearMapAction(apply, adjoint, y, x)


def hyperrep_regression_problem(mats, targets, train_idx, val_idx, r, lam) -> HyperRepRegression:
    return HyperRepRegression(mats, targets, train_idx, val_idx, r, lam)


def make_hyperrep_data(n_samples: int, d: int, r: int, seed: int, signal_scale: float = 3.0):
    """SPD inputs with targets generated from a hidden frame and coefficients.

    y_i = svec(logm(W*' A_i W*)) . beta* + eps_i with unit Gaussian noise; the
    hidden W*, beta* are drawn from the seeded generator and returned for
    reference. ``signal_scale`` sets the coefficient magnitude so the
    regression signal dominates the unit noise.
    """
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(n_samples):
        g = rng.standard_normal((d, d))
        mats.append(sym(g @ g.T / d + 0.5 * np.eye(d)))
    w_true = qf(rng.standard_normal((d, r)))
    beta_true = signal_scale * rng.standard_normal(svec_dim(r))
    targets = np.empty(n_samples)
    for i, a in enumerate(mats):
        feats = svec(logm_spd(sym(w_true.T @ a @ w_true)))
        targets[i] = feats @ beta_true + rng.standard_normal()
    return mats, targets, w_true, beta_true


# ---------------------------------------------------------------------------
# Domain adaptation: bilevel optimal transport with a learned SPD metric
# ---------------------------------------------------------------------------


class OtDomainAdaptation(BilevelProblem):
    """Transport plan on the doubly stochastic manifold with an SPD metric.

    The lower level finds the weighted geometric mean M* of X'X and the
    plan-weighted target covariance Y' G'G Y; the upper level moves the plan
    to minimize the M*-whitened pairwise cost, optionally entropy-regularized.
    """

    def __init__(self, x_data, y_data, alpha: float, lambda_ent: float = 0.0):
        x_data = np.asarray(x_data, dtype=float)
        y_data = np.asarray(y_data, dtype=float)
        n, d = x_data.shape
        m, d2 = y_data.shape
        if d2 != d or n < d or m < d:
            raise ContractError("need X (n x d), Y (m x d) with n, m >= d")
        if not (0.0 <= alpha <= 1.0):
            raise ContractError("alpha must lie in [0, 1]")
        if lambda_ent < 0:
            raise ContractError("lambda_ent must be nonnegative")
        self.x_data = x_data
        self.y_data = y_data
        self.alpha = float(alpha)
        self.lambda_ent = float(lambda_ent)
        self.cx = sym(x_data.T @ x_data)
        if np.linalg.eigvalsh(self.cx).min() <= 0:
            raise ContractError("X'X must be positive definite (whiten the data)")
        self.upper_manifold = DoublyStochastic(n, m)
        self.lower_manifold = Spd(d)

    def _cy(self, g_coords):
        from .errors import NumericError

        cy = sym(self.y_data.T @ (g_coords.T @ g_coords) @ self.y_data)
        if np.linalg.eigvalsh(cy).min() <= 0:
            raise NumericError(
                "plan-weighted target covariance is rank deficient",
                min_eigenvalue=float(np.linalg.eigvalsh(cy).min()),
            )
        return cy

    def _cost_matrix(self, m_coords):
        _, m_isqrt = sqrt_invsqrt_spd(m_coords)
        xs = self.x_data @ m_isqrt
        ys = self.y_data @ m_isqrt
        sq_x = np.sum(xs**2, axis=1)
        sq_y = np.sum(ys**2, axis=1)
        return sq_x[:, None] + sq_y[None, :] - 2.0 * xs @ ys.T

    def lower_solution(self, x: ManifoldPoint) -> ManifoldPoint:
        """Weighted geometric mean of the two covariance targets (test oracle)."""
        if self.alpha == 1.0:
            return self.lower_manifold._pt(self.cx)
        cy = self._cy(x.coords)
        if self.alpha == 0.0:
            return self.lower_manifold._pt(cy)
        s, isq = sqrt_invsqrt_spd(self.cx)
        inner = sym(isq @ cy @ isq)
        vals, vecs = np.linalg.eigh(inner)
        powed = sym((vecs * vals ** (1.0 - self.alpha)) @ vecs.T)
        return self.lower_manifold._pt(sym(s @ powed @ s))

    def f(self, x, y, fidx=None):
        self._reject_batch(fidx)
        gm = x.coords
        val = float(np.sum(gm * self._cost_matrix(y.coords)))
        if self.lambda_ent > 0:
            val += self.lambda_ent * float(np.sum(gm * np.log(gm)))
        return val

    def g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        my = self.lower_manifold
        total = 0.0
        if self.alpha > 0:
            total += self.alpha * my.dist(y, my._pt(self.cx)) ** 2
        if self.alpha < 1:
            total += (1 - self.alpha) * my.dist(y, my._pt(self._cy(x.coords))) ** 2
        return total

    def grad_x_f(self, x, y, fidx=None):
        self._reject_batch(fidx)
        eg = self._cost_matrix(y.coords)
        if self.lambda_ent > 0:
            eg = eg + self.lambda_ent * (np.log(x.coords) + 1.0)
        return self.upper_manifold.egrad_to_rgrad(x, eg)

    def grad_y_f(self, x, y, fidx=None):
        self._reject_batch(fidx)
        gm = x.coords
        xw = self.x_data
        yw = self.y_data
        q = (
            xw.T @ (gm.sum(axis=1)[:, None] * xw)
            - xw.T @ gm @ yw
            - (xw.T @ gm @ yw).T
            + yw.T @ (gm.sum(axis=0)[:, None] * yw)
        )
        return self.lower_manifold._tv(y, -sym(q))

    def grad_y_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        my = self.lower_manifold
        out = np.zeros_like(y.coords)
        if self.alpha > 0:
            out = out - 2.0 * self.alpha * my._log(y.coords, self.cx)
        if self.alpha < 1:
            out = out - 2.0 * (1 - self.alpha) * my._log(y.coords, self._cy(x.coords))
        return my._tv(y, sym(out))

    def hess_y_g(self, x, y, gidx=None):
        """Covariant central difference of grad_y_g with exact SPD transport.

        No closed form is used for the Hessian of squared geodesic distance;
        the step follows h = 1e-6 (1 + |M|_F).
        """
        self._reject_batch(gidx)
        my = self.lower_manifold
        h0 = 1e-6 * (1.0 + np.linalg.norm(y.coords))

        def apply(v):
            nrm = my.norm(y, v)
            if nrm == 0.0:
                return my.zero_tangent(y)
            vhat = (1.0 / nrm) * v
            yp = my.exp(y, h0 * vhat)
            ym = my.exp(y, (-h0) * vhat)
            gp = my.transport(yp, y, self.grad_y_g(x, yp))
            gmn = my.transport(ym, y, self.grad_y_g(x, ym))
            return (nrm / (2.0 * h0)) * (gp - gmn)

        return LinearMapAction(apply, apply, y, y)

    def cross_xy_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        mx, my = self.upper_manifold, self.lower_manifold
        gm = x.coords
        weight = -2.0 * (1.0 - self.alpha)

        if self.alpha == 1.0:
            return LinearMapAction(
                apply=lambda v: mx.zero_tangent(x),
                adjoint_apply=lambda u: my.zero_tangent(y),
                domain_base=y,
                codomain_base=x,
            )

        cy = self._cy(gm)
        m_sqrt, m_isqrt = sqrt_invsqrt_spd(y.coords)
        s_bar = sym(m_isqrt @ cy @ m_isqrt)
        yw = self.y_data

        def apply(v):
            vt = sym(m_isqrt @ v.coords @ m_isqrt)
            k = sym(m_isqrt @ dlogm_spd(s_bar, vt) @ m_isqrt)
            eg = 2.0 * weight * gm @ (yw @ k @ yw.T)
            return mx.egrad_to_rgrad(x, eg)

        def adjoint(u):
            uc = u.coords
            e_mat = sym(yw.T @ (uc.T @ gm + gm.T @ uc) @ yw)
            inner = sym(m_isqrt @ e_mat @ m_isqrt)
            out = weight * sym(m_sqrt @ dlogm_spd(s_bar, inner) @ m_sqrt)
            return my._tv(y, out)

        return LinearMapAction(apply, adjoint, y, x)


def ot_domain_adaptation_problem(x_data, y_data, alpha, lambda_ent=0.0) -> OtDomainAdaptation:
    return OtDomainAdaptation(x_data, y_data, alpha, lambda_ent)


def make_two_domain_data(
    n: int,
    m: int,
    d: int,
    seed: int,
    n_classes: int = 2,
    identical: bool = False,
    map_scale: float = 1.0,
    rotation_angle: float = 0.3,
):
    """Two labeled Gaussian clouds with a known linear map between domains.

    Source samples come from ``n_classes`` clusters; targets are either an
    identical copy (``identical=True``, requires n == m) or fresh samples from
    the same clusters pushed through a mild rotation (strength
    ``rotation_angle``) times ``map_scale``. Keeping the rotation mild leaves
    corresponding clusters near each other, the regime where transport-based
    label transfer is meaningful. Returns (x, x_labels, y, y_labels,
    linear_map).
    """
    rng = np.random.default_rng(seed)
    means = 3.0 * rng.standard_normal((n_classes, d))

    def cloud(count):
        labels = rng.integers(0, n_classes, size=count)
        pts = means[labels] + rng.standard_normal((count, d))
        return pts, labels

    x, x_labels = cloud(n)
    x = x - x.mean(axis=0, keepdims=True)
    x = x / np.linalg.norm(x, 2) * np.sqrt(d)
    if identical:
        if n != m:
            raise ContractError("identical domains require n == m")
        return x, x_labels, x.copy(), x_labels.copy(), np.eye(d)
    skew = rng.standard_normal((d, d))
    skew = 0.5 * (skew - skew.T)
    skew *= rotation_angle / max(np.linalg.norm(skew, 2), 1e-12)
    q = sla.expm(skew)
    y_raw, y_labels = cloud(m)
    y_raw = y_raw - y_raw.mean(axis=0, keepdims=True)
    y_raw = y_raw / np.linalg.norm(y_raw, 2) * np.sqrt(d)
    y = y_raw @ (map_scale * q)
    return x, x_labels, y, y_labels, map_scale * q


# ---------------------------------------------------------------------------
# Min-max reduction: g = -f
# ---------------------------------------------------------------------------


class MinMaxObjective:
    """Saddle objective with second-order data, consumed by minmax_problem.

    Implementations provide f and its derivatives; ``hess_y_f`` must be
    negative definite on the domain so that g = -f is strongly convex.
    """

    upper_manifold: Manifold
    lower_manifold: Manifold

    def f(self, x, y) -> float:
        raise NotImplementedError

    def grad_x_f(self, x, y) -> TangentVec:
        raise NotImplementedError

    def grad_y_f(self, x, y) -> TangentVec:
        raise NotImplementedError

    def hess_y_f(self, x, y) -> LinearMapAction:
        raise NotImplementedError

    def cross_xy_f(self, x, y) -> LinearMapAction:
        raise NotImplementedError

    def hess_inv_y_g(self, x, y) -> LinearMapAction | None:
        return None


class MinMaxProblem(BilevelProblem):
    """min_x max_y f(x, y) folded into the bilevel interface via g = -f.

    At the inner optimum the lower gradient of f vanishes, so the full
    hypergradient collapses to grad_x f; solvers expose a fast path that
    skips the second-order correction entirely.
    """

    is_minmax = True

    def __init__(self, objective: MinMaxObjective):
        self.objective = objective
        self.upper_manifold = objective.upper_manifold
        self.lower_manifold = objective.lower_manifold

    def f(self, x, y, fidx=None):
        self._reject_batch(fidx)
        return self.objective.f(x, y)

    def g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        return -self.objective.f(x, y)

    def grad_x_f(self, x, y, fidx=None):
        self._reject_batch(fidx)
        return self.objective.grad_x_f(x, y)

    def grad_y_f(self, x, y, fidx=None):
        self._reject_batch(fidx)
        return self.objective.grad_y_f(x, y)

    def grad_y_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        return -self.objective.grad_y_f(x, y)

    def hess_y_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        hf = self.objective.hess_y_f(x, y)
        return LinearMapAction(
            apply=lambda v: -hf.apply(v),
            adjoint_apply=lambda v: -hf.adjoint_apply(v),
            domain_base=hf.domain_base,
            codomain_base=hf.codomain_base,
        )

    def cross_xy_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        cf = self.objective.cross_xy_f(x, y)
        return LinearMapAction(
            apply=lambda v: -cf.apply(v),
            adjoint_apply=lambda u: -cf.adjoint_apply(u),
            domain_base=cf.domain_base,
            codomain_base=cf.codomain_base,
        )

    def hess_inv_y_g(self, x, y, gidx=None):
        self._reject_batch(gidx)
        return self.objective.hess_inv_y_g(x, y)


def minmax_problem(objective: MinMaxObjective) -> MinMaxProblem:
    return MinMaxProblem(objective)


class BilinearQuadraticMinMax(MinMaxObjective):
    """f(x, y) = x'b + x'y - 0.5 ||y||^2 on a pair of Euclidean spaces.

    Closed forms: y*(x) = x, F(x) = x'b + 0.5 ||x||^2, grad F = b + x, with
    the stationary point at x = -b.
    """

    def __init__(self, b):
        b = np.asarray(b, dtype=float).ravel()
        self.b = b
        self.upper_manifold = Euclidean((b.size,))
        self.lower_manifold = Euclidean((b.size,))

    def f(self, x, y):
        return float(x.coords @ self.b + x.coords @ y.coords - 0.5 * y.coords @ y.coords)

    def grad_x_f(self, x, y):
        return self.upper_manifold._tv(x, self.b + y.coords)

    def grad_y_f(self, x, y):
        return self.lower_manifold._tv(y, x.coords - y.coords)

    def hess_y_f(self, x, y):
        my = self.lower_manifold
        apply = lambda v: my._tv(y, -v.coords)
        return LinearMapAction(apply, apply, y, y)

    def cross_xy_f(self, x, y):
        mx, my = self.upper_manifold, self.lower_manifold
        return LinearMapAction(
            apply=lambda v: mx._tv(x, v.coords.copy()),
            adjoint_apply=lambda u: my._tv(y, u.coords.copy()),
            domain_base=y,
            codomain_base=x,
        )

    def hess_inv_y_g(self, x, y):
        my = self.lower_manifold
        apply = lambda v: my._tv(y, v.coords.copy())
        return LinearMapAction(apply, apply, y, y)

    def exact_value_gradient(self, x: ManifoldPoint) -> TangentVec:
        return self.upper_manifold._tv(x, self.b + x.coords)
