"""Bilevel descent on the Stiefel x SPD alignment problem.

The upper level rotates a frame W on the Stiefel manifold to maximize the
trace similarity between two datasets under a learned SPD metric M; the lower
level solves a matrix equation (M A M = B) by Riemannian gradient descent.
This script compares the four estimators at identical settings and writes
plot-ready trace CSVs under out/alignment/.
"""

from pathlib import Path

import numpy as np

from manibilevel import (
    EstimatorConfig,
    SolverConfig,
    TscgConfig,
    hypergrad_descent,
    make_synthetic_data,
    synthetic_stiefel_spd_problem,
)
from manibilevel.csvio import write_trace_csv

out_dir = Path("out/alignment")
out_dir.mkdir(parents=True, exist_ok=True)

x_data, y_data = make_synthetic_data(n=40, d=12, r=5, seed=3)
problem = synthetic_stiefel_spd_problem(x_data, y_data, nu=0.01)
print(f"upper manifold {problem.upper_manifold.name}, "
      f"lower manifold {problem.lower_manifold.name}")

for kind in ("hinv", "cg", "neumann", "unroll"):
    cfg = SolverConfig(
        eta_x=0.5, eta_y=0.5, inner_steps=20, outer_steps=60, seed=7,
        estimator=EstimatorConfig(
            kind=kind,
            cg=TscgConfig(max_iters=50, residual_tol=1e-10),
            neumann_terms=50, neumann_gamma=1.0,
        ),
        record_reference_error=True, record_every=10,
    )
    trace = hypergrad_descent(problem, cfg)
    obj = trace.upper_obj
    errs = [r.est_err for r in trace.rows if r.est_err is not None]
    write_trace_csv(trace, out_dir / f"{kind}.csv")
    print(f"{kind:8s} objective {obj[0]:+.4f} -> {obj[-1]:+.4f} | "
          f"estimation error {errs[0]:.1e} -> {errs[-1]:.1e} | "
          f"{trace.rows[-1].wall_s:.2f}s")

print(f"\ntraces written to {out_dir}/ "
      "(columns: k,upper_obj,hypergrad_norm,est_err,inner_grad_norm,wall_s)")
print("the exact and conjugate-gradient solves track the reference closely;")
print("the series and unrolled estimators trade accuracy for cheaper updates.")
