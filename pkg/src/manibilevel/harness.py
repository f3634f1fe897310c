"""Config-driven experiment harness behind the command-line interface.

Configs are single-file INI documents with ``[problem]``, ``[solver]``,
``[estimator]``, ``[output]`` and (for sweeps) ``[sweep]`` sections. Parsing
is fail-closed: unknown sections or keys are rejected by name. Every run
writes its trace CSV next to a manifest recording the resolved configuration,
the seed, and the library version, so reruns are reproducible.
"""

from __future__ import annotations

import configparser
import importlib.metadata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import csvio
from .errors import ContractError, NumericError
from .geometry import LinearMapAction
from .hypergrad import EstimatorConfig, solve_lower_to_tol
from .linalg import sqrt_invsqrt_spd
from .problems import (
    BilevelProblem,
    BilinearQuadraticMinMax,
    hyperrep_regression_problem,
    make_hyperrep_data,
    make_synthetic_data,
    make_two_domain_data,
    minmax_problem,
    ot_domain_adaptation_problem,
    quadratic_oracle_problem,
    synthetic_stiefel_spd_problem,
)
from .solvers import (
    SolverConfig,
    Trace,
    hypergrad_descent,
    minmax_descent_ascent,
    stochastic_hypergrad_descent,
)
from .tscg import TscgConfig

try:
    VERSION = importlib.metadata.version("manibilevel")
except importlib.metadata.PackageNotFoundError:  # pragma: no cover
    VERSION = "unknown"


class ConfigError(Exception):
    """Invalid or unparseable experiment configuration."""


# -- schema ------------------------------------------------------------------

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_value(raw: str, kind: str, key: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            return _BOOL[raw.lower()]
        if kind == "str":
            return raw
        if kind == "int_list":
            return [int(v) for v in raw.split(",") if v.strip() != ""]
        if kind == "float_list":
            return [float(v) for v in raw.split(",") if v.strip() != ""]
        if kind == "str_list":
            return [v.strip() for v in raw.split(",") if v.strip() != ""]
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"key '{key}': cannot parse {raw!r} as {kind}") from exc
    raise AssertionError(kind)


_PROBLEM_KEYS = {
    "kind": "str",
    "corrupt": "str",
    # quadratic
    "a_diag": "float_list",
    "a_csv": "str",
    # synthetic
    "n": "int",
    "d": "int",
    "r": "int",
    "nu": "float",
    "data_seed": "int",
    "x_csv": "str",
    "y_csv": "str",
    # hyperrep
    "n_samples": "int",
    "n_train": "int",
    "lam": "float",
    # ot
    "m": "int",
    "alpha": "float",
    "lambda_ent": "float",
    "n_classes": "int",
    "identical_domains": "bool",
    "map_scale": "float",
    # minmax
    "b": "float_list",
}

_SOLVER_KEYS = {
    "algorithm": "str",
    "eta_x": "float",
    "eta_y": "float",
    "inner_steps": "int",
    "outer_steps": "int",
    "map_mode": "str",
    "seed": "int",
    "batch_sizes": "int_list",
    "record_reference_error": "bool",
    "record_every": "int",
    "grad_tol": "float",
    "cg_warm_start": "bool",
}

_ESTIMATOR_KEYS = {
    "kind": "str",
    "cg_max_iters": "int",
    "cg_tol": "float",
    "neumann_terms": "int",
    "neumann_gamma": "float",
}

_OUTPUT_KEYS = {"trace_name": "str"}

_SWEEP_KEYS = {
    "estimators": "str_list",
    "inner_steps": "int_list",
    "neumann_gammas": "float_list",
    "neumann_terms": "int_list",
}

_SECTIONS = {
    "problem": _PROBLEM_KEYS,
    "solver": _SOLVER_KEYS,
    "estimator": _ESTIMATOR_KEYS,
    "output": _OUTPUT_KEYS,
    "sweep": _SWEEP_KEYS,
}

_PROBLEM_KINDS = ("quadratic", "synthetic", "hyperrep", "ot", "minmax")
_ALGORITHMS = ("deterministic", "stochastic", "minmax")


@dataclass
class ExperimentConfig:
    problem: dict
    solver: SolverConfig
    algorithm: str
    trace_name: str
    sweep: dict | None
    raw_sections: dict


def parse_config(path) -> ExperimentConfig:
    """Read and validate a config file; unknown keys are rejected by name."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    sections: dict[str, dict] = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section '[{name}]'")
        schema = _SECTIONS[name]
        values = {}
        for key, raw in parser.items(name):
            if key not in schema:
                raise ConfigError(f"unknown key '{key}' in section [{name}]")
            values[key] = _parse_value(raw, schema[key], key)
        sections[name] = values

    problem = sections.get("problem", {})
    if "kind" not in problem:
        raise ConfigError("missing key 'kind' in section [problem]")
    if problem["kind"] not in _PROBLEM_KINDS:
        raise ConfigError(f"key 'kind': unknown problem kind {problem['kind']!r}")

    est_raw = sections.get("estimator", {})
    est_kind = est_raw.get("kind", "hinv")
    estimator = EstimatorConfig(
        kind=est_kind,
        cg=TscgConfig(
            max_iters=est_raw.get("cg_max_iters", 50),
            residual_tol=est_raw.get("cg_tol", 1e-10),
        ),
        neumann_terms=est_raw.get("neumann_terms", 50),
        neumann_gamma=est_raw.get("neumann_gamma", 1.0),
    )

    sol_raw = sections.get("solver", {})
    algorithm = sol_raw.get("algorithm", "deterministic")
    if algorithm not in _ALGORITHMS:
        raise ConfigError(f"key 'algorithm': unknown value {algorithm!r}")
    solver = SolverConfig(
        eta_x=sol_raw.get("eta_x", 0.1),
        eta_y=sol_raw.get("eta_y", 0.1),
        inner_steps=sol_raw.get("inner_steps", 10),
        outer_steps=sol_raw.get("outer_steps", 100),
        estimator=estimator,
        map_mode=sol_raw.get("map_mode", "exponential"),
        batch_sizes=tuple(sol_raw["batch_sizes"]) if "batch_sizes" in sol_raw else None,
        seed=sol_raw.get("seed", 0),
        record_reference_error=sol_raw.get("record_reference_error", False),
        record_every=sol_raw.get("record_every", 10),
        grad_tol=sol_raw.get("grad_tol"),
        cg_warm_start=sol_raw.get("cg_warm_start", False),
    )
    try:
        solver.validated()
    except ContractError as exc:
        raise ConfigError(f"invalid solver configuration: {exc}") from exc

    return ExperimentConfig(
        problem=problem,
        solver=solver,
        algorithm=algorithm,
        trace_name=sections.get("output", {}).get("trace_name", "trace.csv"),
        sweep=sections.get("sweep"),
        raw_sections=sections,
    )


# -- problem construction -----------------------------------------------------


class _CorruptedProblem(BilevelProblem):
    """Fault-injection wrapper used by gradient-check tests: one named
    derivative is scaled away from its true value."""

    _ALLOWED = ("grad_x_f", "grad_y_f")

    def __init__(self, inner: BilevelProblem, target: str, factor: float = 1.001):
        if target not in self._ALLOWED:
            raise ConfigError(f"key 'corrupt': supported targets are {self._ALLOWED}")
        self._inner = inner
        self._target = target
        self._factor = factor
        self.upper_manifold = inner.upper_manifold
        self.lower_manifold = inner.lower_manifold
        self.n_upper_samples = inner.n_upper_samples
        self.n_lower_samples = inner.n_lower_samples
        self.is_minmax = inner.is_minmax

    def __getattr__(self, name):
        return getattr(self._inner, name)

    def grad_x_f(self, x, y, fidx=None):
        out = self._inner.grad_x_f(x, y, fidx)
        return self._factor * out if self._target == "grad_x_f" else out

    def grad_y_f(self, x, y, fidx=None):
        out = self._inner.grad_y_f(x, y, fidx)
        return self._factor * out if self._target == "grad_y_f" else out

    def f(self, x, y, fidx=None):
        return self._inner.f(x, y, fidx)

    def g(self, x, y, gidx=None):
        return self._inner.g(x, y, gidx)

    def grad_y_g(self, x, y, gidx=None):
        return self._inner.grad_y_g(x, y, gidx)

    def hess_y_g(self, x, y, gidx=None):
        return self._inner.hess_y_g(x, y, gidx)

    def cross_xy_g(self, x, y, gidx=None):
        return self._inner.cross_xy_g(x, y, gidx)

    def hess_inv_y_g(self, x, y, gidx=None):
        return self._inner.hess_inv_y_g(x, y, gidx)


def build_problem(problem_cfg: dict):
    """Instantiate the configured problem; returns (problem, extras).

    ``extras`` carries generator side-products (labels, source data) consumed
    by the transport demo.
    """
    cfg = dict(problem_cfg)
    kind = cfg.pop("kind")
    corrupt = cfg.pop("corrupt", None)
    extras: dict = {}

    def take(key, default=None, required=False):
        if required and key not in cfg:
            raise ConfigError(f"problem kind '{kind}' requires key '{key}'")
        return cfg.pop(key, default)

    if kind == "quadratic":
        if "a_csv" in cfg:
            a = csvio.read_matrix_csv(take("a_csv"))
        else:
            diag = take("a_diag", required=True)
            a = np.diag(diag)
        problem = quadratic_oracle_problem(a)
    elif kind == "synthetic":
        if "x_csv" in cfg or "y_csv" in cfg:
            x = csvio.read_matrix_csv(take("x_csv", required=True))
            y = csvio.read_matrix_csv(take("y_csv", required=True))
        else:
            x, y = make_synthetic_data(
                take("n", required=True), take("d", required=True),
                take("r", required=True), seed=take("data_seed", 0),
            )
        problem = synthetic_stiefel_spd_problem(x, y, take("nu", 0.01))
    elif kind == "hyperrep":
        n_samples = take("n_samples", required=True)
        n_train = take("n_train", required=True)
        if not (0 < n_train < n_samples):
            raise ConfigError("key 'n_train': need 0 < n_train < n_samples")
        d = take("d", required=True)
        r = take("r", required=True)
        mats, targets, w_true, beta_true = make_hyperrep_data(
            n_samples, d, r, seed=take("data_seed", 0)
        )
        problem = hyperrep_regression_problem(
            mats, targets, np.arange(n_train), np.arange(n_train, n_samples),
            r=r, lam=take("lam", 0.1),
        )
        extras.update(w_true=w_true, beta_true=beta_true)
    elif kind == "ot":
        if "x_csv" in cfg or "y_csv" in cfg:
            x = csvio.read_matrix_csv(take("x_csv", required=True))
            y = csvio.read_matrix_csv(take("y_csv", required=True))
            labels = None
            extras.update(x_data=x, y_data=y)
        else:
            x, xl, y, yl, lin_map = make_two_domain_data(
                take("n", required=True), take("m", required=True),
                take("d", required=True), seed=take("data_seed", 0),
                n_classes=take("n_classes", 2),
                identical=take("identical_domains", False),
                map_scale=take("map_scale", 1.0),
            )
            extras.update(x_data=x, y_data=y, x_labels=xl, y_labels=yl, linear_map=lin_map)
        problem = ot_domain_adaptation_problem(
            x, y, alpha=take("alpha", 0.5), lambda_ent=take("lambda_ent", 0.0)
        )
    elif kind == "minmax":
        problem = minmax_problem(BilinearQuadraticMinMax(take("b", required=True)))
    else:  # pragma: no cover
        raise ConfigError(f"unknown problem kind {kind!r}")

    leftovers = [k for k in cfg if cfg[k] is not None]
    if leftovers:
        raise ConfigError(
            f"keys {leftovers} do not apply to problem kind '{kind}'"
        )
    if corrupt is not None:
        problem = _CorruptedProblem(problem, corrupt)
    return problem, extras


def _solver_for(algorithm: str):
    return {
        "deterministic": hypergrad_descent,
        "stochastic": stochastic_hypergrad_descent,
        "minmax": minmax_descent_ascent,
    }[algorithm]


def _write_manifest(cfg: ExperimentConfig, path: Path) -> None:
    out = configparser.ConfigParser(interpolation=None)
    for name, values in cfg.raw_sections.items():
        out[name] = {
            k: ",".join(str(x) for x in v) if isinstance(v, list) else str(v)
            for k, v in values.items()
        }
    out["resolved"] = {
        "algorithm": cfg.algorithm,
        "seed": str(cfg.solver.seed),
        "estimator": cfg.solver.estimator.kind,
        "version": VERSION,
    }
    with path.open("w") as fh:
        out.write(fh)


def run_experiment(cfg: ExperimentConfig, output_dir, seed=None) -> Path:
    """Build the problem, run the configured solver, write trace + manifest.

    Returns the trace path. All randomness flows from the single seed.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    if seed is not None:
        cfg = replace(cfg, solver=replace(cfg.solver, seed=int(seed)))
    problem, _ = build_problem(cfg.problem)
    if cfg.algorithm == "minmax" and not problem.is_minmax:
        raise ConfigError("algorithm 'minmax' requires problem kind 'minmax'")
    trace = _solver_for(cfg.algorithm)(problem, cfg.solver)
    trace_path = output_dir / cfg.trace_name
    csvio.write_trace_csv(trace, trace_path)
    _write_manifest(cfg, output_dir / "manifest.ini")
    return trace_path


# -- sweeps --------------------------------------------------------------------


def _sweep_cells(cfg: ExperimentConfig):
    sweep = cfg.sweep or {}
    if not sweep:
        raise ConfigError("cmd_sweep requires a [sweep] section with at least one axis")
    estimators = sweep.get("estimators", [cfg.solver.estimator.kind])
    inner_list = sweep.get("inner_steps", [cfg.solver.inner_steps])
    gammas = sweep.get("neumann_gammas", [cfg.solver.estimator.neumann_gamma])
    terms_list = sweep.get("neumann_terms", [cfg.solver.estimator.neumann_terms])
    cells = []
    for kind in estimators:
        if kind not in ("hinv", "cg", "neumann", "unroll"):
            raise ConfigError(f"key 'estimators': unknown estimator {kind!r}")
        g_axis = gammas if kind == "neumann" else [cfg.solver.estimator.neumann_gamma]
        t_axis = terms_list if kind == "neumann" else [cfg.solver.estimator.neumann_terms]
        for s in inner_list:
            for gamma in g_axis:
                for terms in t_axis:
                    est = replace(
                        cfg.solver.estimator, kind=kind,
                        neumann_gamma=gamma, neumann_terms=terms,
                    )
                    solver = replace(cfg.solver, inner_steps=s, estimator=est)
                    name = f"{kind}_S{s}"
                    if kind == "neumann" and (len(g_axis) > 1 or len(t_axis) > 1):
                        name += f"_g{gamma}_T{terms}"
                    cells.append((name, solver))
    return cells


def _cell_summary(name: str, solver: SolverConfig, trace: Trace | None, error: str | None):
    kind = solver.estimator.kind
    t_value = None
    if kind == "neumann":
        t_value = solver.estimator.neumann_terms
    elif kind == "cg":
        t_value = solver.estimator.cg.max_iters
    row = {
        "estimator": kind,
        "S": solver.inner_steps,
        "T": t_value,
        "final_upper_obj": None,
        "median_est_err_last50": None,
        "total_wall_s": None,
        "cell": name,
        "error": error,
    }
    if trace is not None:
        row["final_upper_obj"] = trace.rows[-1].upper_obj
        med = trace.median_est_err_last(50)
        row["median_est_err_last50"] = None if np.isnan(med) else med
        row["total_wall_s"] = trace.rows[-1].wall_s
    return row


def run_sweep(cfg: ExperimentConfig, output_dir, parallelism: int = 1, seed=None):
    """Run every sweep cell, one trace CSV per cell plus a summary CSV.

    Per-cell numeric failures are recorded in the summary (empty metric
    fields) and the sweep continues. Returns (summary rows, summary path).
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    if seed is not None:
        cfg = replace(cfg, solver=replace(cfg.solver, seed=int(seed)))
    cells = _sweep_cells(cfg)

    def run_cell(item):
        name, solver = item
        problem, _ = build_problem(cfg.problem)
        try:
            trace = _solver_for(cfg.algorithm)(problem, solver)
        except NumericError as exc:
            return name, solver, None, str(exc)
        csvio.write_trace_csv(trace, output_dir / f"{name}.csv")
        return name, solver, trace, None

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]

    rows = [_cell_summary(name, solver, trace, err) for name, solver, trace, err in results]
    summary_path = output_dir / "summary.csv"
    csvio.write_summary_csv(rows, summary_path)
    _write_manifest(cfg, output_dir / "manifest.ini")
    return rows, summary_path


# -- gradient checking -----------------------------------------------------------


GRAD_CHECKS = (
    ("grad_y_g_vs_fd", 1e-4),
    ("grad_x_f_vs_fd", 1e-4),
    ("grad_y_f_vs_fd", 1e-4),
    ("hess_y_g_vs_fd", 1e-4),
    ("hess_y_g_self_adjoint", 1e-7),
    ("hess_y_g_positive", 0.0),
    ("cross_adjoint_identity", 1e-8),
    ("cross_yx_vs_fd", 1e-4),
)

CHECK_DIM_GUARD = 200


def check_gradients(cfg: ExperimentConfig, n_dirs: int = 8, fd_step: float = 1e-5):
    """Compare every analytic derivative against finite-difference oracles.

    Returns a list of dicts (check, max_rel_err, tolerance, status). Guarded
    to problems whose upper dimension does not exceed CHECK_DIM_GUARD.
    """
    problem, _ = build_problem(cfg.problem)
    mx, my = problem.upper_manifold, problem.lower_manifold
    if mx.dim > CHECK_DIM_GUARD:
        raise ConfigError(
            f"check-grad guard: upper dimension {mx.dim} exceeds {CHECK_DIM_GUARD}; "
            "use a smaller instance for derivative checking"
        )
    rng = np.random.default_rng(cfg.solver.seed)
    x = mx.rand_point(rng)
    y = my.rand_point(rng)
    h = fd_step
    errs = {name: 0.0 for name, _ in GRAD_CHECKS}

    def unit(manifold, point, vec):
        return (1.0 / manifold.norm(point, vec)) * vec

    for _ in range(n_dirs):
        v = unit(my, y, my.rand_tangent(y, rng))
        u = unit(mx, x, mx.rand_tangent(x, rng))

        fd = (problem.g(x, my.curve(y, v, h)) - problem.g(x, my.curve(y, v, -h))) / (2 * h)
        got = my.inner(y, problem.grad_y_g(x, y), v)
        errs["grad_y_g_vs_fd"] = max(errs["grad_y_g_vs_fd"], abs(got - fd) / (1 + abs(fd)))

        fd = (problem.f(mx.curve(x, u, h), y) - problem.f(mx.curve(x, u, -h), y)) / (2 * h)
        got = mx.inner(x, problem.grad_x_f(x, y), u)
        errs["grad_x_f_vs_fd"] = max(errs["grad_x_f_vs_fd"], abs(got - fd) / (1 + abs(fd)))

        fd = (problem.f(x, my.curve(y, v, h)) - problem.f(x, my.curve(y, v, -h))) / (2 * h)
        got = my.inner(y, problem.grad_y_f(x, y), v)
        errs["grad_y_f_vs_fd"] = max(errs["grad_y_f_vs_fd"], abs(got - fd) / (1 + abs(fd)))

        hess = problem.hess_y_g(x, y)
        yp = my.curve(y, v, h)
        ym = my.curve(y, v, -h)
        gp = my.transport(yp, y, problem.grad_y_g(x, yp))
        gm = my.transport(ym, y, problem.grad_y_g(x, ym))
        fd_vec = (1.0 / (2 * h)) * (gp - gm)
        got_vec = hess.apply(v)
        errs["hess_y_g_vs_fd"] = max(
            errs["hess_y_g_vs_fd"],
            my.norm(y, got_vec - fd_vec) / (1 + my.norm(y, fd_vec)),
        )

        w = unit(my, y, my.rand_tangent(y, rng))
        lhs = my.inner(y, hess.apply(v), w)
        rhs = my.inner(y, v, hess.apply(w))
        errs["hess_y_g_self_adjoint"] = max(
            errs["hess_y_g_self_adjoint"], abs(lhs - rhs) / (1 + abs(lhs))
        )
        rayleigh = my.inner(y, hess.apply(v), v)
        if rayleigh <= 0:
            errs["hess_y_g_positive"] = max(errs["hess_y_g_positive"], -rayleigh + 1e-300)

        cross = problem.cross_xy_g(x, y)
        lhs = mx.inner(x, cross.apply(v), u)
        rhs = my.inner(y, v, cross.adjoint_apply(u))
        errs["cross_adjoint_identity"] = max(
            errs["cross_adjoint_identity"], abs(lhs - rhs) / (1 + abs(lhs))
        )

        gp = problem.grad_y_g(mx.curve(x, u, h), y)
        gm = problem.grad_y_g(mx.curve(x, u, -h), y)
        fd_vec = my._tv(y, (gp.coords - gm.coords) / (2 * h))
        got_vec = cross.adjoint_apply(u)
        errs["cross_yx_vs_fd"] = max(
            errs["cross_yx_vs_fd"],
            my.norm(y, got_vec - fd_vec) / (1 + my.norm(y, fd_vec)),
        )

    report = []
    for name, tol in GRAD_CHECKS:
        err = errs[name]
        ok = err <= tol if tol > 0 else err == 0.0
        report.append(
            {"check": name, "max_rel_err": err, "tolerance": tol,
             "status": "pass" if ok else "fail"}
        )
    return report


def write_check_report(report, path) -> bool:
    import csv as _csv

    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["check", "max_rel_err", "tolerance", "status"])
        for row in report:
            writer.writerow(
                [row["check"], csvio.fmt(row["max_rel_err"]), csvio.fmt(row["tolerance"]),
                 row["status"]]
            )
    return all(row["status"] == "pass" for row in report)


# -- transport demo ----------------------------------------------------------------


def ot_demo(cfg: ExperimentConfig, output_dir, seed=None) -> dict:
    """Solve the bilevel transport problem and write plan, metric, projections.

    Outputs: plan.csv (the transport plan), metric.csv (the learned SPD
    metric), projections.csv (barycentric projections of the source points),
    predicted_labels.csv and report.csv (marginal residual, 1-NN accuracy).
    """
    if cfg.problem.get("kind") != "ot":
        raise ConfigError("ot-demo requires problem kind 'ot'")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    if seed is not None:
        cfg = replace(cfg, solver=replace(cfg.solver, seed=int(seed)))

    problem, extras = build_problem(cfg.problem)
    trace = hypergrad_descent(problem, cfg.solver)
    plan = trace.final_x
    # Refine the metric at the final plan so the reported M* matches it.
    metric = solve_lower_to_tol(problem, plan, trace.final_y, 1e-11)

    gm = plan.coords
    mu = problem.upper_manifold.mu
    nu = problem.upper_manifold.nu
    marginal_residual = float(
        np.abs(gm.sum(axis=1) - mu).sum() + np.abs(gm.sum(axis=0) - nu).sum()
    )

    y_data = problem.y_data
    projections = (gm @ y_data) / mu[:, None]

    _, m_isqrt = sqrt_invsqrt_spd(metric.coords)
    proj_w = projections @ m_isqrt
    targ_w = y_data @ m_isqrt
    d2 = (
        np.sum(proj_w**2, axis=1)[:, None]
        + np.sum(targ_w**2, axis=1)[None, :]
        - 2.0 * proj_w @ targ_w.T
    )
    nearest_source = np.argmin(d2, axis=0)

    result = {
        "marginal_residual": marginal_residual,
        "final_upper_obj": trace.rows[-1].upper_obj,
        "plan": gm,
        "metric": metric.coords,
        "projections": projections,
    }
    csvio.write_matrix_csv(gm, output_dir / "plan.csv")
    csvio.write_matrix_csv(metric.coords, output_dir / "metric.csv")
    csvio.write_matrix_csv(projections, output_dir / "projections.csv")
    csvio.write_trace_csv(trace, output_dir / cfg.trace_name)

    report_rows = [("marginal_residual", marginal_residual),
                   ("final_upper_obj", trace.rows[-1].upper_obj)]
    if "x_labels" in extras:
        predicted = extras["x_labels"][nearest_source]
        accuracy = float(np.mean(predicted == extras["y_labels"]))
        result["nn_accuracy"] = accuracy
        report_rows.append(("nn_accuracy", accuracy))
        csvio.write_matrix_csv(predicted[None, :].astype(float),
                               output_dir / "predicted_labels.csv")

    import csv as _csv

    with (output_dir / "report.csv").open("w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in report_rows:
            writer.writerow([name, csvio.fmt(value)])
    _write_manifest(cfg, output_dir / "manifest.ini")
    return result
