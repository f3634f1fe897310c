"""Dense symmetric-matrix kernels: matrix functions, Lyapunov solve, Sinkhorn.

All matrix functions are computed through the symmetric eigendecomposition.
Every routine in scope only ever sees symmetric input, and the eigenbasis is
reused by the Lyapunov solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError

SYM_TOL = 1e-10


def sym(a: np.ndarray) -> np.ndarray:
    """Symmetric part (a + a^T) / 2."""
    return 0.5 * (a + a.T)


def _require_symmetric(a: np.ndarray, name: str, tol: float = SYM_TOL) -> None:
    scale = 1.0 + np.abs(a).max() if a.size else 1.0
    res = np.abs(a - a.T).max() if a.size else 0.0
    if res > tol * scale:
        raise ContractError(f"{name} must be symmetric; asymmetry {res:.3e}")


def eigh_pd(x: np.ndarray, name: str = "matrix", floor: float = 0.0):
    """Eigendecomposition of a symmetric positive-definite matrix.

    Returns (eigenvalues, eigenvectors). Raises NumericError carrying the
    minimum eigenvalue when the matrix is not positive definite past ``floor``.
    """
    _require_symmetric(x, name)
    w, q = np.linalg.eigh(sym(x))
    if w.min() <= floor:
        raise NumericError(
            f"{name} is not positive definite (min eigenvalue {w.min():.3e})",
            min_eigenvalue=float(w.min()),
        )
    return w, q


def expm_sym(s: np.ndarray) -> np.ndarray:
    """Principal matrix exponential of a symmetric matrix."""
    _require_symmetric(s, "expm_sym input")
    w, q = np.linalg.eigh(sym(s))
    if w.max() > 700.0:
        raise NumericError(
            f"expm_sym overflow: max eigenvalue {w.max():.3e}",
            max_eigenvalue=float(w.max()),
        )
    return sym((q * np.exp(w)) @ q.T)


def logm_spd(x: np.ndarray) -> np.ndarray:
    """Principal matrix logarithm of a symmetric positive-definite matrix."""
    w, q = eigh_pd(x, "logm_spd input")
    return sym((q * np.log(w)) @ q.T)


def sqrtm_spd(x: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric positive-definite matrix."""
    w, q = eigh_pd(x, "sqrtm_spd input")
    return sym((q * np.sqrt(w)) @ q.T)


def sqrt_invsqrt_spd(x: np.ndarray):
    """Both X^{1/2} and X^{-1/2} from one eigendecomposition."""
    w, q = eigh_pd(x, "sqrt_invsqrt_spd input")
    r = np.sqrt(w)
    return sym((q * r) @ q.T), sym((q / r) @ q.T)


def dlogm_spd(x: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Frechet derivative of the matrix logarithm at SPD ``x`` along symmetric ``e``.

    Uses the eigenbasis divided-difference (Daleckii-Krein) formula; the
    result is the symmetric matrix d/dt logm(x + t e) at t = 0.
    """
    w, q = eigh_pd(x, "dlogm_spd base")
    _require_symmetric(e, "dlogm_spd direction")
    lw = np.log(w)
    diff = w[:, None] - w[None, :]
    # Divided differences of log; the diagonal limit is 1/lambda.
    near = np.abs(diff) < 1e-12 * max(1.0, w.max())
    denom = np.where(near, 1.0, diff)
    table = np.where(near, 2.0 / (w[:, None] + w[None, :]), (lw[:, None] - lw[None, :]) / denom)
    et = q.T @ sym(e) @ q
    return sym(q @ (table * et) @ q.T)


def lyapunov_solve(a: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Solve G A + A G = C for symmetric G, with A positive definite.

    Positive definiteness of A guarantees a unique solution. Solved in the
    eigenbasis of A where the equation diagonalizes entrywise.
    """
    _require_symmetric(a, "lyapunov A")
    _require_symmetric(c, "lyapunov C")
    w, q = np.linalg.eigh(sym(a))
    if w.min() <= 0.0:
        raise ContractError(
            f"lyapunov_solve requires positive definite A (min eigenvalue {w.min():.3e})"
        )
    ct = q.T @ sym(c) @ q
    g = ct / (w[:, None] + w[None, :])
    return sym(q @ g @ q.T)


@dataclass(frozen=True)
class SinkhornResult:
    """Balanced matrix diag(row_scale) K diag(col_scale) plus run diagnostics."""

    matrix: np.ndarray
    row_scale: np.ndarray
    col_scale: np.ndarray
    iterations: int
    residual: float


def sinkhorn(
    k: np.ndarray,
    mu: np.ndarray,
    nu: np.ndarray,
    tol: float = 1e-10,
    max_iters: int = 10000,
) -> SinkhornResult:
    """Balance a positive matrix to prescribed marginals by alternating scaling.

    Returns diag(a) K diag(b) whose row sums are ``mu`` and column sums are
    ``nu``, measured in L1 residual. The marginals must carry equal total mass.
    """
    k = np.asarray(k, dtype=float)
    mu = np.asarray(mu, dtype=float).ravel()
    nu = np.asarray(nu, dtype=float).ravel()
    if k.ndim != 2 or k.shape != (mu.size, nu.size):
        raise ContractError(f"sinkhorn shape mismatch: K {k.shape}, mu {mu.size}, nu {nu.size}")
    if k.min() <= 0.0:
        raise ContractError("sinkhorn requires an entrywise positive matrix")
    if mu.min() <= 0.0 or nu.min() <= 0.0:
        raise ContractError("sinkhorn marginals must be positive")
    if abs(mu.sum() - nu.sum()) > 1e-12 * max(1.0, mu.sum()):
        raise ContractError(
            f"sinkhorn marginals must have equal mass ({mu.sum():.17g} vs {nu.sum():.17g})"
        )

    a = np.ones_like(mu)
    b = np.ones_like(nu)
    residual = np.inf
    for it in range(1, max_iters + 1):
        a = mu / (k @ b)
        b = nu / (k.T @ a)
        p = (a[:, None] * k) * b[None, :]
        residual = np.abs(p.sum(axis=1) - mu).sum() + np.abs(p.sum(axis=0) - nu).sum()
        if residual <= tol:
            return SinkhornResult(p, a, b, it, float(residual))
    raise NumericError(
        f"sinkhorn did not reach tol {tol:.1e} in {max_iters} iterations "
        f"(residual {residual:.3e})",
        residual=float(residual),
        iterations=max_iters,
    )


def svec(s: np.ndarray) -> np.ndarray:
    """Vectorize a symmetric matrix: upper triangle, row-major, off-diagonal * sqrt(2).

    The scaling makes <svec(a), svec(b)> equal the Frobenius inner product.
    """
    r = s.shape[0]
    iu = np.triu_indices(r)
    v = s[iu].astype(float).copy()
    off = iu[0] != iu[1]
    v[off] *= np.sqrt(2.0)
    return v


def sunvec(v: np.ndarray, r: int) -> np.ndarray:
    """Inverse of :func:`svec`."""
    s = np.zeros((r, r))
    iu = np.triu_indices(r)
    vals = np.asarray(v, dtype=float).copy()
    off = iu[0] != iu[1]
    vals[off] /= np.sqrt(2.0)
    s[iu] = vals
    s = s + s.T - np.diag(np.diag(s))
    return s


def svec_dim(r: int) -> int:
    return r * (r + 1) // 2
