"""Hypergradient estimators and the finite-difference reference oracle.

All four estimators evaluate the implicit-differentiation formula

    grad F(x) = grad_x f - cross_xy g [ hess_y_g^{-1} [ grad_y f ] ]

at an approximate lower solution, differing in how the Hessian inverse is
applied: exactly (hinv), by tangent-space conjugate gradient (cg), by a
truncated Neumann series (neumann), or implicitly by differentiating the
unrolled inner loop (unroll).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ContractError, NumericError, UnsupportedOperationError
from .geometry import LinearMapAction, ManifoldPoint, TangentVec
from .problems import BilevelProblem
from .tscg import TscgConfig, tscg

ESTIMATOR_KINDS = ("hinv", "cg", "neumann", "unroll")


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs for the hypergradient estimators.

    ``cg`` configures the tangent-space CG solve; ``neumann_terms`` and
    ``neumann_gamma`` the truncated series; ``unroll_steps`` and
    ``unroll_step_size`` the differentiated inner loop (the solver overrides
    these with its own inner loop when driving the unroll estimator).
    """

    kind: str = "hinv"
    cg: TscgConfig = field(default_factory=TscgConfig)
    neumann_terms: int = 50
    neumann_gamma: float = 1.0
    unroll_steps: int = 50
    unroll_step_size: float = 0.5
    spectral_check: bool = True

    def validated(self) -> "EstimatorConfig":
        if self.kind not in ESTIMATOR_KINDS:
            raise ContractError(f"unknown estimator kind {self.kind!r}; use one of {ESTIMATOR_KINDS}")
        if self.neumann_terms < 1 or self.unroll_steps < 1:
            raise ContractError("neumann_terms and unroll_steps must be >= 1")
        if not (self.neumann_gamma > 0):
            raise ContractError("neumann_gamma must be positive")
        self.cg.validated()
        return self


@dataclass(frozen=True)
class HypergradEstimate:
    value: TangentVec
    diagnostics: dict


def _correction(p: BilevelProblem, x, y, v_hat: TangentVec, cross_idx=None) -> TangentVec:
    cross = p.cross_xy_g(x, y, cross_idx)
    return cross.apply(v_hat)


def estimate_hinv(
    p: BilevelProblem,
    x: ManifoldPoint,
    y: ManifoldPoint,
    fidx=None,
    cross_idx=None,
    hess_idx=None,
) -> HypergradEstimate:
    """Hypergradient with the exact Hessian inverse.

    Falls back to a tight tangent-space CG solve when the problem provides no
    analytic inverse; the diagnostics record the delegation.
    """
    gxf = p.grad_x_f(x, y, fidx)
    gyf = p.grad_y_f(x, y, fidx)
    hinv = p.hess_inv_y_g(x, y, hess_idx)
    diagnostics = {"kind": "hinv", "delegated_to_cg": False}
    if hinv is not None:
        v_hat = hinv.apply(gyf)
    else:
        hess = p.hess_y_g(x, y, hess_idx)
        if hess is None:
            raise UnsupportedOperationError(
                "problem provides neither a Hessian inverse nor a Hessian action"
            )
        result = tscg(hess, gyf, TscgConfig(max_iters=10 * max(1, p.lower_manifold.dim),
                                            residual_tol=1e-14))
        v_hat = result.solution
        diagnostics.update(
            delegated_to_cg=True,
            inner_residual=result.final_residual_norm,
            cg_iterations=result.iterations_used,
        )
    value = gxf - _correction(p, x, y, v_hat, cross_idx)
    return HypergradEstimate(value, diagnostics)


def estimate_cg(
    p: BilevelProblem,
    x: ManifoldPoint,
    y: ManifoldPoint,
    cfg: EstimatorConfig,
    fidx=None,
    cross_idx=None,
    hess_idx=None,
) -> HypergradEstimate:
    """Hypergradient with the Hessian solve done by tangent-space CG."""
    cfg = cfg.validated()
    gxf = p.grad_x_f(x, y, fidx)
    gyf = p.grad_y_f(x, y, fidx)
    hess = p.hess_y_g(x, y, hess_idx)
    result = tscg(hess, gyf, cfg.cg)
    value = gxf - _correction(p, x, y, result.solution, cross_idx)
    return HypergradEstimate(
        value,
        {
            "kind": "cg",
            "inner_residual": result.final_residual_norm,
            "cg_iterations": result.iterations_used,
            "solution": result.solution,
        },
    )


def estimate_spectral_bound(h: LinearMapAction, seed_vec: TangentVec, iters: int = 8) -> float:
    """Power-iteration estimate of the largest eigenvalue of a self-adjoint
    positive operator, seeded deterministically from ``seed_vec``."""
    x = seed_vec.base
    m = x.manifold
    u = seed_vec
    nrm = m.norm(x, u)
    if nrm == 0.0:
        return 0.0
    u = (1.0 / nrm) * u
    lam = 0.0
    for _ in range(iters):
        hu = h.apply(u)
        lam = m.inner(x, u, hu)
        nrm = m.norm(x, hu)
        if nrm == 0.0:
            return 0.0
        u = (1.0 / nrm) * hu
    return float(lam)


def neumann_inverse_apply(
    h: LinearMapAction, w: TangentVec, gamma: float, terms: int
) -> TangentVec:
    """gamma * sum_{i<terms} (id - gamma H)^i [w], the truncated series for H^{-1}[w]."""
    acc = w
    term = w
    for _ in range(terms - 1):
        term = term - gamma * h.apply(term)
        acc = acc + term
    return gamma * acc


def estimate_neumann(
    p: BilevelProblem,
    x: ManifoldPoint,
    y: ManifoldPoint,
    cfg: EstimatorConfig,
    fidx=None,
    cross_idx=None,
    hess_idx=None,
) -> HypergradEstimate:
    """Hypergradient with the Hessian inverse truncated to a Neumann series.

    The damping must satisfy gamma * ||H|| < 1 for the series to converge; a
    cheap power-iteration check warns (rather than failing) when the estimate
    leaves that window.
    """
    cfg = cfg.validated()
    gxf = p.grad_x_f(x, y, fidx)
    gyf = p.grad_y_f(x, y, fidx)
    hess = p.hess_y_g(x, y, hess_idx)
    diagnostics = {"kind": "neumann", "terms": cfg.neumann_terms, "gamma": cfg.neumann_gamma}
    if cfg.spectral_check:
        bound = estimate_spectral_bound(hess, gyf)
        diagnostics["spectral_bound_estimate"] = bound
        if cfg.neumann_gamma * bound > 1.0 + 1e-9:
            warnings.warn(
                "neumann estimator: gamma * estimated Hessian bound = "
                f"{cfg.neumann_gamma * bound:.3f} >= 1; the truncated series "
                "may diverge",
                RuntimeWarning,
            )
    v_hat = neumann_inverse_apply(hess, gyf, cfg.neumann_gamma, cfg.neumann_terms)
    value = gxf - _correction(p, x, y, v_hat, cross_idx)
    return HypergradEstimate(value, diagnostics)


# ---------------------------------------------------------------------------
# Inner loop and the unrolled-differentiation estimator
# ---------------------------------------------------------------------------


def inner_step(p: BilevelProblem, x, y, eta_y: float, map_mode: str, gidx=None):
    """One lower-level Riemannian gradient step, exp or retraction mode."""
    m = p.lower_manifold
    grad = p.grad_y_g(x, y, gidx)
    step = (-eta_y) * grad
    if map_mode == "exponential" and m.has_exp:
        y_next = m.exp(y, step)
    else:
        y_next = m.retract(y, step)
    return m._pt(m.normalize_point(y_next.coords)), grad


def run_inner_loop(
    p: BilevelProblem,
    x: ManifoldPoint,
    y0: ManifoldPoint,
    steps: int,
    eta_y: float,
    map_mode: str = "exponential",
    record: bool = False,
    batch_stream=None,
):
    """S lower-level gradient steps from y0; optionally records the iterate tape.

    ``batch_stream`` supplies one index set per step for stochastic runs.
    Returns (y_final, tape or None, last gradient norm).
    """
    m = p.lower_manifold
    y = y0
    tape = [y0] if record else None
    last_norm = m.norm(y0, p.grad_y_g(x, y0)) if steps == 0 else 0.0
    for s in range(steps):
        gidx = batch_stream[s] if batch_stream is not None else None
        y, grad = inner_step(p, x, y, eta_y, map_mode, gidx)
        last_norm = m.norm(grad.base, grad)
        if record:
            tape.append(y)
    return y, tape, last_norm


def solve_lower_to_tol(
    p: BilevelProblem,
    x: ManifoldPoint,
    y0: ManifoldPoint,
    tol: float,
    max_steps: int = 200_000,
    eta_y: float | None = None,
    map_mode: str = "exponential",
) -> ManifoldPoint:
    """Run the inner loop until the lower gradient norm reaches ``tol``.

    When no step size is given, 1 / (spectral bound of the Hessian at y0)
    seeds the schedule; a backtracking guard halves the step whenever it fails
    to decrease g, so curvature growth away from the start cannot diverge.
    Raises NumericError with the achieved residual on failure.
    """
    m = p.lower_manifold
    if eta_y is None:
        seed = p.grad_y_g(x, y0)
        if m.norm(y0, seed) <= tol:
            return y0
        bound = estimate_spectral_bound(p.hess_y_g(x, y0), seed, iters=20)
        eta_y = 1.0 / max(bound, 1e-12)
    y = y0
    g_val = p.g(x, y)
    for _ in range(max_steps):
        grad = p.grad_y_g(x, y)
        nrm = m.norm(y, grad)
        if nrm <= tol:
            return y
        while True:
            try:
                y_trial, _ = inner_step(p, x, y, eta_y, map_mode)
                g_trial = p.g(x, y_trial)
            except NumericError:
                g_trial = np.inf
            if np.isfinite(g_trial) and g_trial <= g_val + 1e-15 * (1 + abs(g_val)):
                break
            eta_y *= 0.5
            if eta_y < 1e-16:
                raise NumericError(
                    "lower-level solve stalled: no descent at vanishing step size",
                    achieved=float(nrm),
                )
        y, g_val = y_trial, g_trial
    grad = p.grad_y_g(x, y)
    raise NumericError(
        f"lower-level solve did not reach gradient norm {tol:.1e} in {max_steps} steps",
        achieved=float(m.norm(y, grad)),
    )


def _pullback_covector(m, y_from: ManifoldPoint, y_to: ManifoldPoint, a: TangentVec) -> TangentVec:
    """Adjoint of the step-to-step projection transport: sharp at the earlier
    point of the flat (ambient covector) representation at the later point."""
    e = m.flat(y_to, a)
    return m.egrad_to_rgrad(y_from, e)


def unroll_from_tape(
    p: BilevelProblem,
    x: ManifoldPoint,
    tape: list[ManifoldPoint],
    eta_y: float,
    fidx=None,
    cross_idx=None,
    hess_idx=None,
) -> HypergradEstimate:
    """Reverse-mode differentiation of the recorded inner loop.

    Backpropagates grad_y f through the recursion
    D y^{s+1} = P_{y^{s+1}} ((id - eta H) D y^s - eta cross_yx), using the
    metric adjoint of the projection transport between consecutive iterates.
    Memory is O(S) lower-level points.
    """
    if len(tape) < 2:
        raise ContractError("unroll needs at least one recorded inner step")
    m = p.lower_manifold
    y_final = tape[-1]
    gxf = p.grad_x_f(x, y_final, fidx)
    a = p.grad_y_f(x, y_final, fidx)
    acc = gxf
    growth = 0.0
    ref = max(m.norm(y_final, a), 1e-300)
    for s in range(len(tape) - 2, -1, -1):
        ys, ys1 = tape[s], tape[s + 1]
        c = _pullback_covector(m, ys, ys1, a)
        cross = p.cross_xy_g(x, ys, cross_idx)
        acc = acc - eta_y * cross.apply(c)
        hess = p.hess_y_g(x, ys, hess_idx)
        a = c - eta_y * hess.apply(c)
        growth = max(growth, m.norm(ys, a) / ref)
    return HypergradEstimate(
        acc,
        {"kind": "unroll", "depth": len(tape) - 1, "covector_growth": growth},
    )


def estimate_unroll(
    p: BilevelProblem,
    x: ManifoldPoint,
    y0: ManifoldPoint,
    cfg: EstimatorConfig,
    map_mode: str = "exponential",
    tape: list[ManifoldPoint] | None = None,
    fidx=None,
    cross_idx=None,
    hess_idx=None,
) -> HypergradEstimate:
    """Unrolled-differentiation hypergradient.

    Runs ``unroll_steps`` inner steps from y0 (unless a tape is supplied by
    the solver) and reverse-differentiates through them.
    """
    cfg = cfg.validated()
    if tape is None:
        _, tape, _ = run_inner_loop(
            p, x, y0, cfg.unroll_steps, cfg.unroll_step_size, map_mode, record=True
        )
    return unroll_from_tape(
        p, x, tape, cfg.unroll_step_size, fidx=fidx, cross_idx=cross_idx, hess_idx=hess_idx
    )


def unroll_forward_directional(
    p: BilevelProblem,
    x: ManifoldPoint,
    y0: ManifoldPoint,
    u: TangentVec,
    cfg: EstimatorConfig,
    map_mode: str = "exponential",
) -> float:
    """Forward-mode directional derivative of the unrolled objective.

    Propagates the lower-iterate perturbation alongside the inner loop; used
    to cross-check the reverse sweep at small dimensions (one sweep per upper
    direction).
    """
    cfg = cfg.validated()
    m = p.lower_manifold
    mx = p.upper_manifold
    _, tape, _ = run_inner_loop(
        p, x, y0, cfg.unroll_steps, cfg.unroll_step_size, map_mode, record=True
    )
    eta = cfg.unroll_step_size
    delta = m.zero_tangent(y0)
    for s in range(len(tape) - 1):
        ys, ys1 = tape[s], tape[s + 1]
        hess = p.hess_y_g(x, ys)
        cross = p.cross_xy_g(x, ys)
        moved = delta - eta * (hess.apply(delta) + cross.adjoint_apply(u))
        delta = m.proj(ys1, moved.coords)
    y_final = tape[-1]
    gxf = p.grad_x_f(x, y_final)
    gyf = p.grad_y_f(x, y_final)
    return mx.inner(x, gxf, u) + m.inner(y_final, gyf, delta)


def estimate(
    p: BilevelProblem,
    x: ManifoldPoint,
    y: ManifoldPoint,
    cfg: EstimatorConfig,
    map_mode: str = "exponential",
    tape: list[ManifoldPoint] | None = None,
    fidx=None,
    cross_idx=None,
    hess_idx=None,
) -> HypergradEstimate:
    """Dispatch on the configured estimator kind.

    For ``unroll`` the point ``y`` is the inner-loop start unless a solver
    tape is given.
    """
    cfg = cfg.validated()
    if cfg.kind == "hinv":
        return estimate_hinv(p, x, y, fidx, cross_idx, hess_idx)
    if cfg.kind == "cg":
        return estimate_cg(p, x, y, cfg, fidx, cross_idx, hess_idx)
    if cfg.kind == "neumann":
        return estimate_neumann(p, x, y, cfg, fidx, cross_idx, hess_idx)
    return estimate_unroll(
        p, x, y, cfg, map_mode, tape, fidx=fidx, cross_idx=cross_idx, hess_idx=hess_idx
    )


def fd_hypergrad_oracle(
    p: BilevelProblem,
    x: ManifoldPoint,
    inner_tol: float = 1e-10,
    step: float = 1e-5,
    y0: ManifoldPoint | None = None,
    max_inner: int = 200_000,
) -> TangentVec:
    """Central finite differences of F(x) = f(x, y*(x)) along tangent directions.

    Independent reference for the estimators: solves the lower level to
    ``inner_tol`` (gradient norm) at each probe point and differences the
    value function along the exponential (or retraction) curves of an
    orthonormal tangent basis.
    """
    mx = p.upper_manifold
    if y0 is None:
        y0 = p.lower_manifold.rand_point(np.random.default_rng(0))
    y_center = solve_lower_to_tol(p, x, y0, inner_tol, max_inner)

    def value(x_probe):
        y_star = solve_lower_to_tol(p, x_probe, y_center, inner_tol, max_inner)
        return p.f(x_probe, y_star)

    basis = mx.tangent_basis(x)
    coeffs = np.empty(len(basis))
    for i, e in enumerate(basis):
        up = value(mx.curve(x, e, step))
        down = value(mx.curve(x, e, -step))
        coeffs[i] = (up - down) / (2.0 * step)
    out = mx.zero_tangent(x)
    for c, e in zip(coeffs, basis):
        out = out + float(c) * e
    return out
