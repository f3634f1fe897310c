"""Outer loops: hypergradient descent, its stochastic variant, and the
min-max fast path.

Each outer iteration warm-starts the lower level from the previous outer
iterate, takes a fixed number of lower-level gradient steps, evaluates the
configured hypergradient estimator, and moves the upper variable by the
exponential map or the retraction. Runs are deterministic given the seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ContractError, NumericError
from .geometry import ManifoldPoint, TangentVec
from .hypergrad import (
    EstimatorConfig,
    estimate,
    estimate_hinv,
    run_inner_loop,
    solve_lower_to_tol,
)
from .problems import BilevelProblem, draw_indices
from .tscg import TscgConfig


@dataclass(frozen=True)
class SolverConfig:
    """All solver knobs.

    ``batch_sizes`` must be present exactly when the run is stochastic.
    ``record_reference_error`` computes, every ``record_every`` iterations, a
    near-exact reference hypergradient (full batch, refined inner solution)
    and stores the estimator's deviation from it in the trace.
    """

    eta_x: float = 0.1
    eta_y: float = 0.1
    inner_steps: int = 10
    outer_steps: int = 100
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    map_mode: str = "exponential"
    batch_sizes: Optional[tuple] = None
    seed: int = 0
    record_reference_error: bool = False
    record_every: int = 10
    reference_tol: float = 1e-11
    grad_tol: Optional[float] = None
    cg_warm_start: bool = False

    def validated(self) -> "SolverConfig":
        if self.eta_x < 0:
            raise ContractError("eta_x must be nonnegative")
        if not (self.eta_y > 0):
            raise ContractError("eta_y must be positive")
        if self.inner_steps < 1 or self.outer_steps < 1:
            raise ContractError("inner_steps and outer_steps must be >= 1")
        if self.map_mode not in ("exponential", "retraction"):
            raise ContractError("map_mode must be 'exponential' or 'retraction'")
        if self.record_every < 1:
            raise ContractError("record_every must be >= 1")
        if self.batch_sizes is not None:
            sizes = tuple(int(s) for s in self.batch_sizes)
            if len(sizes) != 4 or min(sizes) < 1:
                raise ContractError("batch_sizes must be four integers >= 1")
        self.estimator.validated()
        return self


@dataclass(frozen=True)
class TraceRow:
    k: int
    upper_obj: float
    hypergrad_norm: float
    est_err: Optional[float]
    inner_grad_norm: float
    wall_s: float


@dataclass
class Trace:
    """Per-outer-iteration record plus the final point pair."""

    rows: list[TraceRow]
    final_x: ManifoldPoint
    final_y: ManifoldPoint

    def column(self, name: str) -> np.ndarray:
        vals = [getattr(r, name) for r in self.rows]
        return np.array([np.nan if v is None else v for v in vals], dtype=float)

    @property
    def upper_obj(self) -> np.ndarray:
        return self.column("upper_obj")

    @property
    def hypergrad_norm(self) -> np.ndarray:
        return self.column("hypergrad_norm")

    def min_squared_hypergrad(self, upto: int | None = None) -> float:
        h = self.hypergrad_norm
        if upto is not None:
            h = h[: upto + 1]
        return float(np.min(h**2))

    def median_est_err_last(self, window: int) -> float:
        kmin = self.rows[-1].k - window + 1
        vals = [r.est_err for r in self.rows if r.est_err is not None and r.k >= kmin]
        return float(np.median(vals)) if vals else float("nan")


def _upper_step(manifold, x: ManifoldPoint, step: TangentVec, map_mode: str) -> ManifoldPoint:
    if map_mode == "exponential" and manifold.has_exp:
        moved = manifold.exp(x, step)
    else:
        moved = manifold.retract(x, step)
    return manifold._pt(manifold.normalize_point(moved.coords))


def _reference_error(p, x, y, estimate_value, cfg) -> float:
    """Deviation of the estimate from a near-exact full-batch hypergradient."""
    y_ref = solve_lower_to_tol(p, x, y, cfg.reference_tol, map_mode=cfg.map_mode)
    ref = estimate_hinv(p, x, y_ref).value
    return p.upper_manifold.norm(x, estimate_value - ref)


def _run(
    p: BilevelProblem,
    cfg: SolverConfig,
    x0: Optional[ManifoldPoint],
    y0: Optional[ManifoldPoint],
    stochastic: bool,
    minmax_fast_path: bool,
) -> Trace:
    cfg = cfg.validated()
    if stochastic:
        if not p.is_stochastic:
            raise ContractError("stochastic solver requires a stochastic problem")
        if cfg.batch_sizes is None:
            raise ContractError("stochastic solver requires batch_sizes")
    elif cfg.batch_sizes is not None:
        raise ContractError("deterministic solver takes no batch_sizes")
    if minmax_fast_path and not p.is_minmax:
        raise ContractError("the fast path applies only to min-max problems")

    mx, my = p.upper_manifold, p.lower_manifold
    rng = np.random.default_rng(cfg.seed)
    x = x0 if x0 is not None else mx.rand_point(rng)
    y = y0 if y0 is not None else my.rand_point(rng)
    sizes = tuple(int(s) for s in cfg.batch_sizes) if stochastic else None

    record_tape = cfg.estimator.kind == "unroll" and not minmax_fast_path
    rows: list[TraceRow] = []
    warm_cg: Optional[TangentVec] = None
    t_start = time.perf_counter()

    for k in range(cfg.outer_steps):
        try:
            if stochastic:
                # The inner batch is drawn afresh at every lower step; the
                # remaining three are per outer iteration. The upper batch is
                # shared between both f-gradients.
                inner_stream = [
                    draw_indices(sizes[0], p.n_lower_samples, rng)
                    for _ in range(cfg.inner_steps)
                ]
                fidx = draw_indices(sizes[1], p.n_upper_samples, rng)
                cross_idx = draw_indices(sizes[2], p.n_lower_samples, rng)
                hess_idx = draw_indices(sizes[3], p.n_lower_samples, rng)
            else:
                inner_stream = None
                fidx = cross_idx = hess_idx = None

            y_next, tape, inner_grad_norm = run_inner_loop(
                p, x, y, cfg.inner_steps, cfg.eta_y, cfg.map_mode,
                record=record_tape, batch_stream=inner_stream,
            )

            if minmax_fast_path:
                value = p.grad_x_f(x, y_next, fidx)
            else:
                est_cfg = cfg.estimator
                if est_cfg.kind == "unroll":
                    est_cfg = replace(
                        est_cfg, unroll_steps=cfg.inner_steps, unroll_step_size=cfg.eta_y
                    )
                if est_cfg.kind == "cg" and cfg.cg_warm_start and warm_cg is not None:
                    moved = my.transport(warm_cg.base, y_next, warm_cg)
                    est_cfg = replace(est_cfg, cg=replace(est_cfg.cg, warm_start=moved))
                result = estimate(
                    p, x, y_next, est_cfg, cfg.map_mode, tape=tape,
                    fidx=fidx, cross_idx=cross_idx, hess_idx=hess_idx,
                )
                value = result.value
                if est_cfg.kind == "cg" and cfg.cg_warm_start:
                    warm_cg = result.diagnostics.get("solution")

            hypergrad_norm = mx.norm(x, value)

            est_err = None
            if cfg.record_reference_error and k % cfg.record_every == 0:
                est_err = _reference_error(p, x, y_next, value, cfg)

            rows.append(
                TraceRow(
                    k=k,
                    upper_obj=float(p.f(x, y_next)),
                    hypergrad_norm=float(hypergrad_norm),
                    est_err=est_err,
                    inner_grad_norm=float(inner_grad_norm),
                    wall_s=time.perf_counter() - t_start,
                )
            )

            x = _upper_step(mx, x, (-cfg.eta_x) * value, cfg.map_mode)
            y = my._pt(my.normalize_point(y_next.coords))

            if cfg.grad_tol is not None and hypergrad_norm <= cfg.grad_tol:
                break
        except NumericError as exc:
            raise NumericError(f"outer iteration {k}: {exc}", iteration=k, **exc.info) from exc

    return Trace(rows=rows, final_x=x, final_y=y)


def hypergrad_descent(
    p: BilevelProblem,
    cfg: SolverConfig,
    x0: Optional[ManifoldPoint] = None,
    y0: Optional[ManifoldPoint] = None,
) -> Trace:
    """Deterministic bilevel descent: S lower gradient steps (warm-started
    from the previous outer iterate), one estimator call, one upper step per
    iteration."""
    return _run(p, cfg, x0, y0, stochastic=False, minmax_fast_path=False)


def stochastic_hypergrad_descent(
    p: BilevelProblem,
    cfg: SolverConfig,
    x0: Optional[ManifoldPoint] = None,
    y0: Optional[ManifoldPoint] = None,
) -> Trace:
    """Mini-batch variant. Batch-size-equals-population requests enumerate
    the dataset instead of sampling, so full-batch runs reproduce the
    deterministic solver bitwise under the same seed."""
    return _run(p, cfg, x0, y0, stochastic=True, minmax_fast_path=False)


def minmax_descent_ascent(
    p: BilevelProblem,
    cfg: SolverConfig,
    x0: Optional[ManifoldPoint] = None,
    y0: Optional[ManifoldPoint] = None,
) -> Trace:
    """Alternating descent-ascent for min-max problems (g = -f): the upper
    update uses grad_x f at the ascended y, skipping all second-order terms."""
    return _run(p, cfg, x0, y0, stochastic=False, minmax_fast_path=True)
