"""Bilevel optimization on Riemannian matrix manifolds.

The library follows the implicit-differentiation route: the gradient of the
bilevel value function F(x) = f(x, y*(x)) is

    grad F(x) = grad_x f - cross_xy g [ hess_y_g^{-1} [ grad_y f ] ],

evaluated at an approximate lower solution. Four estimators realize the
Hessian-inverse application (exact, conjugate gradient, truncated Neumann
series, unrolled differentiation) on top of a small manifold geometry core
(Euclidean, SPD, Stiefel, doubly stochastic), with deterministic, stochastic
and min-max outer loops plus a config-driven experiment harness.
"""

from .errors import ContractError, NumericError, UnsupportedOperationError
from .geometry import (
    LinearMapAction,
    Manifold,
    ManifoldPoint,
    ProductManifold,
    TangentVec,
    product,
)
from .hypergrad import (
    ESTIMATOR_KINDS,
    EstimatorConfig,
    HypergradEstimate,
    estimate,
    estimate_cg,
    estimate_hinv,
    estimate_neumann,
    estimate_unroll,
    fd_hypergrad_oracle,
    neumann_inverse_apply,
    run_inner_loop,
    solve_lower_to_tol,
    unroll_forward_directional,
)
from .linalg import (
    SinkhornResult,
    dlogm_spd,
    expm_sym,
    logm_spd,
    lyapunov_solve,
    sinkhorn,
    sqrtm_spd,
    sunvec,
    svec,
)
from .manifolds import DoublyStochastic, Euclidean, Spd, Stiefel
from .problems import (
    Batches,
    BilevelProblem,
    BilinearQuadraticMinMax,
    MinMaxObjective,
    draw_indices,
    hyperrep_regression_problem,
    make_hyperrep_data,
    make_synthetic_data,
    make_two_domain_data,
    minmax_problem,
    ot_domain_adaptation_problem,
    quadratic_oracle_problem,
    sample_batches,
    synthetic_stiefel_spd_problem,
)
from .solvers import (
    SolverConfig,
    Trace,
    TraceRow,
    hypergrad_descent,
    minmax_descent_ascent,
    stochastic_hypergrad_descent,
)
from .tscg import TscgConfig, TscgResult, tscg

__version__ = "0.1.0"
