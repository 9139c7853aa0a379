"""CSV and JSON emitters.

Floats are written with ``repr`` so that identical results give
byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .engine import SeriesResult


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def write_series_csv(result: SeriesResult, path) -> None:
    """``t,p,stderr,trunc,imag_residual`` then one ``order_n`` column per order."""
    n_max = result.per_order.shape[0]
    header = ["t", "p", "stderr", "trunc", "imag_residual"] + [f"order_{n}" for n in range(1, n_max + 1)]
    rows = (
        [result.times[i], result.p_values[i], result.mc_stderr[i], result.truncation_estimate[i],
         result.imag_residual[i], *result.per_order[:, i]]
        for i in range(result.times.size)
    )
    write_rows(path, header, rows)


def write_compare_csv(times, p_series, p_oracle, path, stderr=None, trunc=None) -> None:
    times = np.asarray(times, dtype=float)
    stderr = np.zeros_like(times) if stderr is None else stderr
    trunc = np.zeros_like(times) if trunc is None else trunc
    rows = (
        [t, a, b, abs(a - b), e, tr]
        for t, a, b, e, tr in zip(times, p_series, p_oracle, stderr, trunc)
    )
    write_rows(path, ["t", "p_series", "p_oracle", "deviation", "stderr", "trunc"], rows)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    return value


def series_summary(result: SeriesResult) -> dict:
    return {
        "engine": result.meta.get("engine"),
        "n_max": result.meta.get("n_max"),
        "times": result.times,
        "p": result.p_values,
        "stderr": result.mc_stderr,
        "truncation_estimate": result.truncation_estimate,
        "imag_residual": result.imag_residual,
        "orders_used": result.orders_used,
        "nonconverged": result.nonconverged,
        "out_of_range": result.out_of_range,
        "converged": result.converged,
        "max_node_imag": result.max_node_imag,
        "assembly_discrepancy": result.assembly_discrepancy,
    }


def write_json(data: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
