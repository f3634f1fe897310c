"""CSV serialization: traces, matrices, and sweep summaries.

Floats are written with shortest round-trip decimals (``repr``), so equal
values serialize to identical bytes and files reload losslessly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ContractError

TRACE_HEADER = ["k", "upper_obj", "hypergrad_norm", "est_err", "inner_grad_norm", "wall_s"]
SUMMARY_HEADER = ["estimator", "S", "T", "final_upper_obj", "median_est_err_last50", "total_wall_s"]


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_trace_csv(trace, path) -> None:
    """One row per outer iteration; missing est_err becomes an empty field."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for r in trace.rows:
            writer.writerow(
                [r.k, fmt(r.upper_obj), fmt(r.hypergrad_norm), fmt(r.est_err),
                 fmt(r.inner_grad_norm), fmt(r.wall_s)]
            )


def read_trace_csv(path) -> dict:
    """Columns as float arrays; empty est_err entries load as NaN."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_HEADER:
            raise ContractError(f"unexpected trace header {header}")
        rows = list(reader)
    cols = {name: [] for name in TRACE_HEADER}
    for row in rows:
        for name, cell in zip(TRACE_HEADER, row):
            cols[name].append(np.nan if cell == "" else float(cell))
    return {name: np.array(vals) for name, vals in cols.items()}


def write_matrix_csv(matrix, path) -> None:
    """Row-major dense matrix, full precision."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([fmt(v) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [[float(c) for c in row] for row in csv.reader(fh) if row]
    if not rows:
        raise ContractError(f"{path} holds no matrix data")
    return np.array(rows)


def write_summary_csv(rows: list[dict], path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row.get("estimator", ""),
                    fmt(row.get("S")) if row.get("S") is not None else "",
                    fmt(row.get("T")) if row.get("T") is not None else "",
                    fmt(row.get("final_upper_obj")),
                    fmt(row.get("median_est_err_last50")),
                    fmt(row.get("total_wall_s")),
                ]
            )


def read_summary_csv(path) -> list[dict]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_HEADER:
            raise ContractError(f"unexpected summary header {reader.fieldnames}")
        out = []
        for row in reader:
            parsed = dict(row)
            for key in ("S", "T", "final_upper_obj", "median_est_err_last50", "total_wall_s"):
                parsed[key] = float(row[key]) if row[key] != "" else None
            out.append(parsed)
    return out
