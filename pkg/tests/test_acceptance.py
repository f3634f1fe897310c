"""Acceptance suite: one test per criterion, one printed PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and timings. The heavyweight full-scale sweep (criteria 4 and 7) runs
once in a shared fixture.
"""

import time

import numpy as np
import pytest

from manibilevel import csvio
from manibilevel.harness import ot_demo, parse_config, run_sweep
from manibilevel.hypergrad import (
    EstimatorConfig,
    estimate,
    estimate_cg,
    estimate_hinv,
    estimate_neumann,
    estimate_unroll,
    fd_hypergrad_oracle,
    run_inner_loop,
    solve_lower_to_tol,
)
from manibilevel.linalg import lyapunov_solve, sinkhorn, sym
from manibilevel.manifolds import DoublyStochastic, Euclidean, Spd, Stiefel
from manibilevel.problems import (
    BilinearQuadraticMinMax,
    hyperrep_regression_problem,
    make_hyperrep_data,
    make_synthetic_data,
    make_two_domain_data,
    minmax_problem,
    quadratic_oracle_problem,
    synthetic_stiefel_spd_problem,
)
from manibilevel.solvers import (
    SolverConfig,
    hypergrad_descent,
    minmax_descent_ascent,
    stochastic_hypergrad_descent,
)
from manibilevel.tscg import TscgConfig


def report(number, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {number} {status}: {detail}")
    assert ok, f"criterion {number}: {detail}"


@pytest.fixture(scope="module")
def small_synthetic():
    x_data, y_data = make_synthetic_data(12, 6, 3, seed=1)
    p = synthetic_stiefel_spd_problem(x_data, y_data, 0.01)
    rng = np.random.default_rng(5)
    x = p.upper_manifold.rand_point(rng)
    y0 = p.lower_manifold.rand_point(rng)
    return p, x, y0


FULL_SWEEP_CONFIG = """
[problem]
kind = synthetic
n = 100
d = 50
r = 20
nu = 0.01
data_seed = 42

[solver]
eta_x = 0.5
eta_y = 0.5
inner_steps = 50
outer_steps = 200
seed = 7
record_reference_error = true
record_every = 10

[estimator]
kind = hinv
cg_max_iters = 50
cg_tol = 1e-10
neumann_gamma = 1.0
neumann_terms = 50

[sweep]
estimators = hinv,cg,neumann,unroll
inner_steps = 50
"""


@pytest.fixture(scope="module")
def full_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    cfg_path = out / "config.ini"
    cfg_path.write_text(FULL_SWEEP_CONFIG)
    start = time.perf_counter()
    rows, summary_path = run_sweep(parse_config(cfg_path), out)
    elapsed = time.perf_counter() - start
    return rows, summary_path, out, elapsed


def test_criterion_1_estimator_exactness():
    start = time.perf_counter()
    p = quadratic_oracle_problem(np.diag([2.0, 1.0]))
    x = p.upper_manifold.point([1.0, 1.0])
    y_star = p.lower_solution(x)
    target = np.array([4.0, 1.0])

    gaps = {}
    gaps["hinv"] = np.abs(estimate_hinv(p, x, y_star).value.coords - target).max()
    cg_cfg = EstimatorConfig(kind="cg", cg=TscgConfig(max_iters=50, residual_tol=1e-12))
    gaps["cg"] = np.abs(estimate_cg(p, x, y_star, cg_cfg).value.coords - target).max()
    ns_cfg = EstimatorConfig(kind="neumann", neumann_terms=50, neumann_gamma=0.4)
    gaps["neumann"] = np.abs(estimate_neumann(p, x, y_star, ns_cfg).value.coords - target).max()
    ad_cfg = EstimatorConfig(kind="unroll", unroll_steps=200, unroll_step_size=0.5)
    y0 = p.lower_manifold.point([0.3, -0.7])
    gaps["unroll"] = np.abs(estimate_unroll(p, x, y0, ad_cfg).value.coords - target).max()
    elapsed = time.perf_counter() - start

    ok = (
        gaps["hinv"] <= 1e-8
        and gaps["cg"] <= 1e-8
        and gaps["neumann"] <= 1e-5
        and gaps["unroll"] <= 1e-5
        and elapsed < 1.0
    )
    report(
        1, ok,
        "quadratic oracle gaps "
        + ", ".join(f"{k}={v:.2e}" for k, v in gaps.items())
        + f" ({elapsed:.2f}s)",
    )


def test_criterion_2_implicit_formula_vs_finite_differences(small_synthetic):
    start = time.perf_counter()
    p, x, y0 = small_synthetic
    y_star = solve_lower_to_tol(p, x, y0, 1e-10)
    hinv = estimate_hinv(p, x, y_star).value
    oracle = fd_hypergrad_oracle(p, x, inner_tol=1e-10, step=1e-5, y0=y_star)
    mx = p.upper_manifold
    gap = mx.norm(x, hinv - oracle)
    bound = 1e-4 * (1.0 + mx.norm(x, oracle))
    elapsed = time.perf_counter() - start
    ok = gap <= bound and elapsed < 10.0
    report(2, ok, f"|hinv - fd| = {gap:.3e} <= {bound:.3e} ({elapsed:.1f}s)")


def test_criterion_3_error_decay_shadow(small_synthetic):
    start = time.perf_counter()
    p, x, y0 = small_synthetic
    mx = p.upper_manifold
    y_star = solve_lower_to_tol(p, x, y0, 1e-11)
    reference = fd_hypergrad_oracle(p, x, inner_tol=1e-11, step=1e-5, y0=y_star)
    eta = 0.5

    def err(value):
        return mx.norm(x, value - reference)

    failures = []
    # Errors across inner-step counts, per estimator.
    cfgs = {
        "hinv": EstimatorConfig(kind="hinv"),
        "cg": EstimatorConfig(kind="cg", cg=TscgConfig(max_iters=100, residual_tol=1e-12)),
        "neumann": EstimatorConfig(kind="neumann", neumann_terms=50, neumann_gamma=1.0),
    }
    for name, cfg in cfgs.items():
        errs = []
        for s in (5, 10, 20, 40):
            y_s, _, _ = run_inner_loop(p, x, y0, s, eta)
            errs.append(err(estimate(p, x, y_s, cfg).value))
        if not all(b <= 1.1 * a + 1e-12 for a, b in zip(errs, errs[1:])):
            failures.append((name, errs))
    errs = []
    for s in (5, 10, 20, 40):
        cfg = EstimatorConfig(kind="unroll", unroll_steps=s, unroll_step_size=eta)
        errs.append(err(estimate_unroll(p, x, y0, cfg).value))
    if not all(b <= 1.1 * a + 1e-12 for a, b in zip(errs, errs[1:])):
        failures.append(("unroll", errs))

    # Errors across solver iterations at fixed inner count, for cg and neumann.
    y_40, _, _ = run_inner_loop(p, x, y0, 40, eta)
    for name in ("cg", "neumann"):
        errs = []
        for t in (5, 10, 20, 50):
            if name == "cg":
                cfg = EstimatorConfig(kind="cg", cg=TscgConfig(max_iters=t, residual_tol=1e-16))
                errs.append(err(estimate_cg(p, x, y_40, cfg).value))
            else:
                cfg = EstimatorConfig(kind="neumann", neumann_terms=t, neumann_gamma=1.0)
                errs.append(err(estimate_neumann(p, x, y_40, cfg).value))
        if not all(b <= 1.1 * a + 1e-12 for a, b in zip(errs, errs[1:])):
            failures.append((name + "_T", errs))

    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 60.0
    report(3, ok, f"non-increasing error curves, violations={failures} ({elapsed:.1f}s)")


def test_criterion_4_qualitative_sweep(full_sweep):
    rows, summary_path, out, elapsed = full_sweep
    summary = csvio.read_summary_csv(summary_path)
    med = {row["estimator"]: row["median_est_err_last50"] for row in summary}

    problems = []
    for cell in rows:
        cols = csvio.read_trace_csv(out / f"{cell['cell']}.csv")
        obj = cols["upper_obj"]
        if not np.all(np.isfinite(obj)):
            problems.append((cell["cell"], "non-finite objective"))
        if not obj[-1] < obj[0]:
            problems.append((cell["cell"], "no improvement"))
        # No divergence: after a short transient the trajectory never climbs
        # back above the starting value.
        if not np.all(obj[10:] <= obj[0] + 1e-9):
            problems.append((cell["cell"], "diverged above start"))

    ordering_ok = med["hinv"] <= med["neumann"] and med["hinv"] <= med["unroll"]
    ok = not problems and ordering_ok and elapsed < 300.0
    report(
        4, ok,
        f"objective curves clean={not problems} {problems if problems else ''}; "
        f"median err hinv={med['hinv']:.2e} <= neumann={med['neumann']:.2e}, "
        f"unroll={med['unroll']:.2e} ({elapsed:.0f}s)",
    )


def test_criterion_5_stochastic_deterministic_coherence():
    start = time.perf_counter()
    mats, targets, _, _ = make_hyperrep_data(40, 10, 3, seed=77)
    p = hyperrep_regression_problem(
        mats, targets, np.arange(20), np.arange(20, 40), r=3, lam=0.1
    )

    base = dict(eta_x=0.2, eta_y=0.3, inner_steps=10, outer_steps=30, seed=11,
                estimator=EstimatorConfig(kind="hinv"))
    det = hypergrad_descent(p, SolverConfig(**base))
    sto = stochastic_hypergrad_descent(
        p, SolverConfig(batch_sizes=(20, 20, 20, 20), **base)
    )
    bitwise = [r.upper_obj for r in det.rows] == [r.upper_obj for r in sto.rows]

    finals, initials = [], []
    for seed in range(5):
        cfg = SolverConfig(eta_x=0.05, eta_y=0.3, inner_steps=10, outer_steps=800,
                           seed=seed, estimator=EstimatorConfig(kind="hinv"),
                           batch_sizes=(5, 5, 5, 5))
        tr = stochastic_hypergrad_descent(p, cfg)
        initials.append(tr.rows[0].upper_obj)
        finals.append(tr.rows[-1].upper_obj)
    ratio = float(np.median(finals) / np.median(initials))
    elapsed = time.perf_counter() - start
    ok = bitwise and ratio <= 0.5 and elapsed < 120.0
    report(
        5, ok,
        f"full-batch bitwise={bitwise}; minibatch median loss ratio "
        f"{ratio:.3f} <= 0.5 ({elapsed:.0f}s)",
    )


def test_criterion_6_geometry_suites():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    failures = []

    # exp/log round-trips at 1e-7.
    for m in (Euclidean((3, 2)), Spd(5), DoublyStochastic(4, 5)):
        for _ in range(10):
            x = m.rand_point(rng)
            u = m.rand_tangent(x, rng)
            u = (0.1 / m.norm(x, u)) * u
            v = m.log(x, m.exp(x, u))
            if m.norm(x, v - u) > 1e-7 * (1 + m.norm(x, u)):
                failures.append(f"roundtrip {m.name}")

    # Transport isometry at 1e-8 on manifolds that promise it.
    for m in (Euclidean((4,)), Spd(4)):
        x = m.rand_point(rng)
        y = m.exp(x, 0.3 * m.rand_tangent(x, rng))
        for _ in range(20):
            u = m.rand_tangent(x, rng)
            v = m.rand_tangent(x, rng)
            before = m.inner(x, u, v)
            after = m.inner(y, m.transport(x, y, u), m.transport(x, y, v))
            if abs(after - before) > 1e-8 * (1 + abs(before)):
                failures.append(f"transport {m.name}")

    # Lyapunov residual at 1e-10 relative.
    for n in (2, 5, 20):
        for _ in range(20):
            q, _ = np.linalg.qr(rng.standard_normal((n, n)))
            w = np.exp(rng.uniform(-np.log(1e3), np.log(1e3), size=n))
            a = sym((q * w) @ q.T)
            c = sym(rng.standard_normal((n, n)))
            g = lyapunov_solve(a, c)
            if np.linalg.norm(g @ a + a @ g - c) > 1e-10 * np.linalg.norm(c):
                failures.append(f"lyapunov n={n}")

    # Sinkhorn marginals at 1e-10.
    k = rng.uniform(0.5, 2.0, size=(50, 50))
    mu = np.full(50, 1.0 / 50)
    res = sinkhorn(k, mu, mu)
    if res.residual > 1e-10:
        failures.append("sinkhorn")

    # Hessian conversion self-adjointness at 1e-7.
    for m in (Euclidean((2, 2)), Spd(4), Stiefel(5, 2), DoublyStochastic(3, 4)):
        size = int(np.prod(m.ambient_shape))
        h = rng.standard_normal((size, size))
        h = 0.5 * (h + h.T)
        c0 = rng.standard_normal(m.ambient_shape)
        x = m.rand_point(rng)
        eg = c0 + (h @ x.coords.ravel()).reshape(m.ambient_shape)
        for _ in range(100):
            u = m.rand_tangent(x, rng)
            v = m.rand_tangent(x, rng)
            hu = m.ehess_to_rhess(x, eg, (h @ u.coords.ravel()).reshape(m.ambient_shape), u)
            hv = m.ehess_to_rhess(x, eg, (h @ v.coords.ravel()).reshape(m.ambient_shape), v)
            lhs = m.inner(x, hu, v)
            rhs = m.inner(x, u, hv)
            if abs(lhs - rhs) > 1e-7 * (1 + abs(lhs)):
                failures.append(f"hessian {m.name}")
                break

    # Retraction stays within second order of exp where both exist.
    for m in (Euclidean((3,)), Spd(4), DoublyStochastic(3, 3)):
        x = m.rand_point(rng)
        u = m.rand_tangent(x, rng)
        u = (1.0 / m.norm(x, u)) * u
        for t in (1e-1, 1e-2, 1e-3):
            gap = m.dist(m.retract(x, t * u), m.exp(x, t * u))
            if gap > 1e-8 + 5.0 * t * t:
                failures.append(f"retraction {m.name}")

    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 30.0
    report(6, ok, f"geometry invariant suites, violations={failures} ({elapsed:.0f}s)")


def test_criterion_7_retraction_mode(full_sweep):
    _, _, _, sweep_elapsed = full_sweep
    start = time.perf_counter()
    x_data, y_data = make_synthetic_data(100, 50, 20, seed=42)
    p = synthetic_stiefel_spd_problem(x_data, y_data, 0.01)
    mins = {}
    for mode in ("exponential", "retraction"):
        cfg = SolverConfig(eta_x=0.5, eta_y=0.5, inner_steps=50, outer_steps=200,
                           seed=7, map_mode=mode, estimator=EstimatorConfig(kind="hinv"))
        mins[mode] = hypergrad_descent(p, cfg).min_squared_hypergrad()
    elapsed = time.perf_counter() - start
    ratio = mins["retraction"] / mins["exponential"]
    ok = ratio <= 2.0 and (elapsed + sweep_elapsed) < 300.0
    report(
        7, ok,
        f"min-over-k squared hypergradient: retraction {mins['retraction']:.3e} "
        f"within 2x of exponential {mins['exponential']:.3e} (ratio {ratio:.3f}, "
        f"{elapsed:.0f}s + shared sweep {sweep_elapsed:.0f}s)",
    )


def test_criterion_8_minmax_reduction():
    start = time.perf_counter()
    obj = BilinearQuadraticMinMax([1.0, 0.0])
    p = minmax_problem(obj)
    cfg = SolverConfig(eta_x=0.1, eta_y=0.1, inner_steps=10, outer_steps=500,
                       estimator=EstimatorConfig(kind="hinv"))
    x0 = p.upper_manifold.point([0.5, 0.5])
    y0 = p.lower_manifold.point([0.0, 0.0])
    trace = minmax_descent_ascent(p, cfg, x0, y0)
    grad_norm = float(np.linalg.norm(obj.exact_value_gradient(trace.final_x).coords))

    x_mid = p.upper_manifold.point([0.2, -0.6])
    y_star = solve_lower_to_tol(p, x_mid, y0, 1e-12)
    fast = p.grad_x_f(x_mid, y_star)
    full = estimate_hinv(p, x_mid, y_star).value
    gap = float(np.abs(fast.coords - full.coords).max())
    elapsed = time.perf_counter() - start
    ok = grad_norm <= 1e-6 and gap <= 1e-8 and elapsed < 5.0
    report(
        8, ok,
        f"|grad F(x_K)| = {grad_norm:.2e} <= 1e-6; fast path vs full hinv gap "
        f"{gap:.2e} <= 1e-8 ({elapsed:.1f}s)",
    )


OT_DEMO_CONFIG = """
[problem]
kind = ot
n = 40
m = 40
d = 5
alpha = 1.0
lambda_ent = 0.0
data_seed = 11
n_classes = 3
identical_domains = true

[solver]
eta_x = 0.3
eta_y = 0.25
inner_steps = 5
outer_steps = 60
seed = 2

[estimator]
kind = cg
"""


def test_criterion_9_transport_demo(tmp_path):
    start = time.perf_counter()
    cfg_path = tmp_path / "ot.ini"
    cfg_path.write_text(OT_DEMO_CONFIG)
    cfg = parse_config(cfg_path)
    result = ot_demo(cfg, tmp_path / "out")
    x_data, _, _, _, _ = make_two_domain_data(40, 40, 5, seed=11, n_classes=3, identical=True)
    cx = sym(x_data.T @ x_data)
    rel = np.linalg.norm(result["metric"] - cx) / np.linalg.norm(cx)
    elapsed = time.perf_counter() - start
    ok = (
        result["marginal_residual"] <= 1e-8
        and rel <= 1e-4
        and result["nn_accuracy"] == 1.0
        and elapsed < 60.0
    )
    report(
        9, ok,
        f"marginal residual {result['marginal_residual']:.2e} <= 1e-8; "
        f"metric vs X'X rel {rel:.2e} <= 1e-4; self-label accuracy "
        f"{result['nn_accuracy']:.3f} ({elapsed:.0f}s)",
    )
