"""Trace serialization: CSV traces, JSON summaries and plot-data files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from typing import Any

import numpy as np

from .solver import SolveTrace

__all__ = [
    "trace_columns",
    "trace_rows",
    "trace_to_csv",
    "read_trace_csv",
    "write_text_atomic",
    "write_trace_csv",
    "write_json",
    "plot_data",
    "path_data",
]

FLOAT_FORMAT = ".17g"


def trace_columns(trace: SolveTrace) -> list[str]:
    z = trace.records[0].z
    cols = ["k"]
    for name, arr in (("w", z.w), ("lambda", z.lam), ("mu", z.mu), ("xi", z.xi), ("nu", z.nu)):
        cols += [f"{name}[{i}]" for i in range(arr.size)]
    cols += ["kkt_residual", "step_norm", "err_to_ref", "branch_signature", "num_candidates", "r_norm", "kappa"]
    return cols


def trace_rows(trace: SolveTrace) -> list[dict[str, Any]]:
    """One dict per record with the CSV columns; None marks an empty cell."""
    cols = trace_columns(trace)
    rows = []
    for rec in trace.records:
        values = [rec.k, *rec.z.w, *rec.z.lam, *rec.z.mu, *rec.z.xi, *rec.z.nu,
                  rec.kkt_residual, rec.step_norm, rec.err_to_ref, rec.branch,
                  rec.num_candidates, rec.r_norm, rec.kappa]
        row = {}
        for c, v in zip(cols, values):
            if isinstance(v, (np.floating, float)):
                v = float(v)
            elif isinstance(v, np.integer):
                v = int(v)
            row[c] = v
        rows.append(row)
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, FLOAT_FORMAT)
    return str(v)


def trace_to_csv(trace: SolveTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trace_columns(trace))
    for row in trace_rows(trace):
        writer.writerow([_cell(v) for v in row.values()])
    return buf.getvalue()


_INT_COLUMNS = ("k", "num_candidates")
_STR_COLUMNS = ("branch_signature",)


def read_trace_csv(source) -> list[dict[str, Any]]:
    """Parse a trace CSV (path or text) back into the dicts of :func:`trace_rows`."""
    if "\n" in source:
        text = source
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    out = []
    for raw in csv.DictReader(io.StringIO(text)):
        row = {}
        for key, val in raw.items():
            if key in _STR_COLUMNS:
                row[key] = val
            elif val == "":
                row[key] = None
            elif key in _INT_COLUMNS:
                row[key] = int(val)
            else:
                row[key] = float(val)
        out.append(row)
    return out


def write_text_atomic(path: str, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace_csv(trace: SolveTrace, path: str) -> None:
    write_text_atomic(path, trace_to_csv(trace))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path: str | None = None) -> str:
    text = json.dumps(_jsonable(obj), indent=2) + "\n"
    if path is not None:
        write_text_atomic(path, text)
    return text


def plot_data(errors, header: str = "iteration error") -> str:
    """Two columns (iteration, error); iterations with no error value are skipped."""
    lines = [f"# {header}"]
    for k, e in enumerate(errors):
        if e is None or not np.isfinite(e):
            continue
        lines.append(f"{k} {format(float(e), FLOAT_FORMAT)}")
    return "\n".join(lines) + "\n"


def path_data(trace: SolveTrace) -> str:
    """(w1, w2) rows of the iterate path."""
    lines = ["# w1 w2"]
    for rec in trace.records:
        lines.append(" ".join(format(float(v), FLOAT_FORMAT) for v in rec.z.w[:2]))
    return "\n".join(lines) + "\n"
