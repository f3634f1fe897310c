"""Conjugate gradient on a single tangent space.

Solves H[v] = G for a self-adjoint positive-definite operator H on the
tangent space at G's base point, using the Riemannian inner product there
throughout. One operator application per iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ContractError
from .geometry import LinearMapAction, TangentVec, require_base


@dataclass(frozen=True)
class TscgConfig:
    max_iters: int = 50
    residual_tol: float = 1e-10
    warm_start: Optional[TangentVec] = None

    def validated(self) -> "TscgConfig":
        if self.max_iters < 1:
            raise ContractError("tscg needs max_iters >= 1")
        if not (self.residual_tol > 0):
            raise ContractError("tscg needs residual_tol > 0")
        return self


@dataclass(frozen=True)
class TscgResult:
    solution: TangentVec
    iterations_used: int
    final_residual_norm: float


def tscg(
    h: LinearMapAction,
    g: TangentVec,
    cfg: TscgConfig,
    on_iterate: Callable[[TangentVec], None] | None = None,
) -> TscgResult:
    """Run tangent-space CG; stops at the residual tolerance or the iteration cap.

    Raises ContractError with the offending Rayleigh quotient if H turns out
    not to be positive definite along a search direction. The reported
    residual norm is recomputed from the returned solution.
    """
    cfg = cfg.validated()
    x = g.base
    manifold = x.manifold

    if cfg.warm_start is not None:
        require_base(x, cfg.warm_start, "warm start")
        v = cfg.warm_start
        r = g - h.apply(v)
    else:
        v = manifold.zero_tangent(x)
        r = g

    rr = manifold.inner(x, r, r)
    iterations = 0
    if np.sqrt(rr) > cfg.residual_tol:
        p = r
        for _ in range(cfg.max_iters):
            hp = h.apply(p)
            php = manifold.inner(x, p, hp)
            if php <= 0.0:
                pp = manifold.inner(x, p, p)
                raise ContractError(
                    "tscg: operator is not positive definite "
                    f"(Rayleigh quotient {php / pp:.3e})"
                )
            alpha = rr / php
            v = v + alpha * p
            r = r - alpha * hp
            iterations += 1
            if on_iterate is not None:
                on_iterate(v)
            rr_new = manifold.inner(x, r, r)
            if np.sqrt(rr_new) <= cfg.residual_tol:
                break
            if rr_new < 1e-300:
                break  # breakdown guard: residual underflow counts as converged
            p = r + (rr_new / rr) * p
            rr = rr_new

    final_residual = manifold.norm(x, g - h.apply(v))
    return TscgResult(solution=v, iterations_used=iterations, final_residual_norm=final_residual)
