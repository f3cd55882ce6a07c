"""CSV ingestion and report/table writers.

Dialect: comma separated, UTF-8, one header row, ``.`` decimal separator and
unquoted numerics. Floats are written with ``repr`` so a file read back
reproduces the written matrices exactly.
"""
from __future__ import annotations

import csv
import json
import os
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InputError
from .model import Dataset

MISSING_TOKENS = {"", "na", "nan", "null", "none", "."}


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def read_numeric_csv(path) -> tuple[list, np.ndarray]:
    """Read a header plus all-numeric body.

    Rows with missing cells are rejected in a single error that lists their
    line numbers (1-based, header is line 1).
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: file is empty") from None
        if len(set(header)) != len(header):
            raise InputError(f"{path}: duplicate column names in header")
        rows, missing = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            values = []
            for col, cell in zip(header, row):
                cell = cell.strip()
                if cell.lower() in MISSING_TOKENS:
                    missing.append(line_no)
                    break
                try:
                    values.append(float(cell))
                except ValueError:
                    raise InputError(
                        f"{path}:{line_no}: column {col!r}: not a number: {cell!r}") from None
            else:
                rows.append(values)
    if missing:
        shown = ", ".join(str(i) for i in missing[:20])
        more = f" (and {len(missing) - 20} more)" if len(missing) > 20 else ""
        raise InputError(f"{path}: missing values on lines {shown}{more}")
    if not rows:
        raise InputError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(arr)):
        bad = sorted({int(i) + 2 for i in np.argwhere(~np.isfinite(arr))[:, 0]})
        raise InputError(f"{path}: non-finite values on lines {bad[:20]}")
    return header, arr


def load_dataset(path, response: str, covariates: Sequence[str],
                 exposures: Sequence[str], intercept: bool = True):
    """Build a :class:`Dataset` from named CSV columns.

    Returns ``(dataset, covariate_names)``; when ``intercept`` is true an
    all-ones column named ``(Intercept)`` is prepended to ``X``.
    """
    header, arr = read_numeric_csv(path)
    if not response:
        raise InputError("exactly one response column is required")
    if not exposures:
        raise InputError("at least one exposure column is required")
    declared = [response, *covariates, *exposures]
    absent = [c for c in declared if c not in header]
    if absent:
        raise InputError(f"{path}: declared columns not in header: {absent}")
    if len(set(declared)) != len(declared):
        raise InputError("a column is assigned more than one role")
    col = {name: j for j, name in enumerate(header)}
    y = arr[:, col[response]]
    X = arr[:, [col[c] for c in covariates]] if covariates else np.empty((arr.shape[0], 0))
    names = list(covariates)
    if intercept:
        X = np.column_stack([np.ones(arr.shape[0]), X])
        names = ["(Intercept)", *names]
    if X.shape[1] == 0:
        raise InputError("design matrix has no columns; enable the intercept or add covariates")
    Z = arr[:, [col[c] for c in exposures]]
    return Dataset(y, X, Z), names


def write_dataset_csv(path, data: Dataset, covariate_names: Optional[Sequence[str]] = None,
                      exposure_names: Optional[Sequence[str]] = None,
                      response_name: str = "y"):
    cov = list(covariate_names or [f"x{j}" for j in range(data.p)])
    exp = list(exposure_names or [f"z{j}" for j in range(data.m)])
    write_csv(path, [response_name, *cov, *exp],
              np.column_stack([data.y, data.X, data.Z]))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None


# ------------------------------------------------------ report tables

TABLE1 = "table1_covariate_coverage.csv"
TABLE2 = "table2_pollutant_coverage.csv"
TABLE3 = "table3_sigma2_bias.csv"
FIGURE2 = "figure2_coverage_vs_n.csv"
REPORT_JSON = "report.json"


def write_report_tables(report, outdir) -> list:
    """Write the coverage/bias tables and the coverage-vs-n series."""
    os.makedirs(outdir, exist_ok=True)
    names = report.coefficient_names
    paths = []

    rows = []
    for n in report.sample_sizes:
        for m in report.methods:
            c = report.cell(m, n)
            cov = c.covariate_coverage or [None] * len(names)
            rows.append([n, m, *cov, c.successes, c.failures])
    path = os.path.join(outdir, TABLE1)
    write_csv(path, ["n", "method", *names, "replications_ok", "failures"], rows)
    paths.append(path)

    vi = [m for m in report.methods if m.startswith("VI")]
    rows = []
    for n in report.sample_sizes:
        rows.append([n, *[report.cell(m, n).pollutant_coverage for m in vi]])
    path = os.path.join(outdir, TABLE2)
    write_csv(path, ["n", *vi], rows)
    paths.append(path)

    keys = ["mean", "sd", "p2.5", "median", "p97.5", "mse"]
    rows = []
    for n in report.sample_sizes:
        for m in vi:
            s = report.cell(m, n).sigma2 or {}
            rows.append([n, m, *[s.get(k) for k in keys]])
    path = os.path.join(outdir, TABLE3)
    write_csv(path, ["n", "method", *keys], rows)
    paths.append(path)

    rows = []
    for m in report.methods:
        for j, name in enumerate(names):
            for n in report.sample_sizes:
                cov = report.cell(m, n).covariate_coverage
                rows.append([m, name, n, cov[j] if cov else None])
    path = os.path.join(outdir, FIGURE2)
    write_csv(path, ["method", "coefficient", "n", "coverage"], rows)
    paths.append(path)

    path = os.path.join(outdir, REPORT_JSON)
    write_json(path, report.to_dict(include_timing=False))
    paths.append(path)
    return paths


def write_timing_csv(path, timing: dict):
    """``timing`` maps a group label (e.g. ``n``) to stage -> summary."""
    rows = []
    for group, stages in timing.items():
        for stage, s in stages.items():
            rows.append([group, stage, s["mean"], s["sd"], s["min"], s["max"]])
    write_csv(path, ["group", "stage", "mean_s", "sd_s", "min_s", "max_s"], rows)
