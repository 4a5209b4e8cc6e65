"""CSV data/label files, matrix exports and flat ``key = value`` config files.

Data files: header ``sample_id,step,x1,...,xM``, one row per (sample, step),
steps ``1..N`` contiguous per sample. Label files: header ``sample_id,y``.
"""

import csv
from pathlib import Path

import numpy as np


class DataSchemaError(ValueError):
    """Input file does not follow the expected CSV schema."""


def _fmt(v):
    return repr(float(v))


def write_data_csv(path, X, sample_ids=None):
    X = np.asarray(X, dtype=float)
    b, n, m = X.shape
    ids = range(b) if sample_ids is None else sample_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "step"] + [f"x{i + 1}" for i in range(m)])
        for sid, window in zip(ids, X):
            for step, row in enumerate(window, start=1):
                w.writerow([sid, step] + [_fmt(v) for v in row])


def write_labels_csv(path, y, sample_ids=None):
    y = np.asarray(y)
    ids = range(len(y)) if sample_ids is None else sample_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "y"])
        for sid, v in zip(ids, y):
            w.writerow([sid, int(v) if np.issubdtype(y.dtype, np.integer) else _fmt(v)])


def _rows(path):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError:
        raise
    with fh:
        yield from csv.reader(fh)


def _number(value, path, row, column):
    try:
        out = float(value)
    except ValueError:
        raise DataSchemaError(f"{path}: row {row}, column {column}: not a number: {value!r}") from None
    if not np.isfinite(out):
        raise DataSchemaError(f"{path}: row {row}, column {column}: non-finite value {value!r}")
    return out


def read_data_csv(path):
    """Parse a data file into ``(sample_ids, X)`` with ``X`` of shape ``(B, N, M)``."""
    rows = _rows(path)
    header = next(rows, None)
    if not header or header[:2] != ["sample_id", "step"] or len(header) < 4:
        raise DataSchemaError(f"{path}: row 1: header must be sample_id,step,x1,...,xM (M >= 2)")
    m = len(header) - 2
    if header[2:] != [f"x{i + 1}" for i in range(m)]:
        raise DataSchemaError(f"{path}: row 1: variable columns must be named x1..x{m}")
    samples, order = {}, []
    for r, row in enumerate(rows, start=2):
        if len(row) != m + 2:
            raise DataSchemaError(f"{path}: row {r}: expected {m + 2} columns, got {len(row)}")
        sid = row[0]
        try:
            step = int(row[1])
        except ValueError:
            raise DataSchemaError(f"{path}: row {r}, column step: not an integer: {row[1]!r}") from None
        if sid not in samples:
            samples[sid] = []
            order.append(sid)
        elif order[-1] != sid:
            raise DataSchemaError(f"{path}: row {r}, column sample_id: rows of sample {sid!r} are not contiguous")
        expected = len(samples[sid]) + 1
        if step != expected:
            raise DataSchemaError(f"{path}: row {r}, column step: expected step {expected}, got {step}")
        samples[sid].append([_number(v, path, r, header[c + 2]) for c, v in enumerate(row[2:])])
    if not order:
        raise DataSchemaError(f"{path}: no data rows")
    lengths = {len(v) for v in samples.values()}
    if len(lengths) != 1:
        raise DataSchemaError(f"{path}: column step: samples have differing lengths {sorted(lengths)}")
    return order, np.array([samples[s] for s in order], dtype=float)


def read_labels_csv(path, sample_ids=None):
    """Parse a label file; if ``sample_ids`` is given, return labels in that order."""
    rows = _rows(path)
    header = next(rows, None)
    if header != ["sample_id", "y"]:
        raise DataSchemaError(f"{path}: row 1: header must be sample_id,y")
    labels = {}
    for r, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise DataSchemaError(f"{path}: row {r}: expected 2 columns, got {len(row)}")
        labels[row[0]] = _number(row[1], path, r, "y")
    ids = list(labels) if sample_ids is None else sample_ids
    missing = [s for s in ids if s not in labels]
    if missing:
        raise DataSchemaError(f"{path}: column sample_id: no label for sample {missing[0]!r}")
    return ids, np.array([labels[s] for s in ids])


def write_matrix_csv(path, matrix):
    matrix = np.asarray(matrix, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i"] + [f"x{j + 1}" for j in range(matrix.shape[1])])
        for i, row in enumerate(matrix):
            w.writerow([f"x{i + 1}"] + [_fmt(v) for v in row])


def read_matrix_csv(path):
    rows = list(_rows(path))
    if not rows or rows[0][:1] != ["i"]:
        raise DataSchemaError(f"{path}: row 1: header must start with 'i'")
    return np.array([[_number(v, path, r, rows[0][c + 1]) for c, v in enumerate(row[1:])]
                     for r, row in enumerate(rows[1:], start=2)])


def write_beta_csv(path, beta):
    """Long-format lag-resolved structure: ``target,source,tau,beta`` (1-based)."""
    from .structure import neighbours

    beta = np.asarray(beta, dtype=float)
    m, _, n = beta.shape
    idx = neighbours(m)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target", "source", "tau", "beta"])
        for i in range(m):
            for k, j in enumerate(idx[i]):
                for tau in range(n):
                    w.writerow([i + 1, int(j) + 1, tau + 1, _fmt(beta[i, k, tau])])


def read_beta_csv(path):
    """Inverse of :func:`write_beta_csv`; returns the ``(M, M - 1, N)`` slot array."""
    from .structure import neighbours

    rows = list(_rows(path))
    if not rows or rows[0] != ["target", "source", "tau", "beta"]:
        raise DataSchemaError(f"{path}: row 1: header must be target,source,tau,beta")
    recs = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise DataSchemaError(f"{path}: row {r}: expected 4 columns, got {len(row)}")
        i, j, tau = (int(_number(v, path, r, c)) for v, c in zip(row[:3], rows[0][:3]))
        recs.append((i, j, tau, _number(row[3], path, r, "beta")))
    m = max(max(r[0], r[1]) for r in recs)
    n = max(r[2] for r in recs)
    pos = {(int(i), int(j)): k for i in range(m) for k, j in enumerate(neighbours(m)[i])}
    beta = np.zeros((m, m - 1, n))
    for i, j, tau, v in recs:
        beta[i - 1, pos[(i - 1, j - 1)], tau - 1] = v
    return beta


def read_config(path):
    """Flat ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataSchemaError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out
