"""Delimited-text file formats.

All numbers are written with 17 significant digits so that values survive a
write/read round trip bit for bit.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError

__all__ = [
    "ParseError",
    "fmt",
    "read_observations",
    "write_observations",
    "write_path",
    "read_table",
    "write_samples",
    "read_samples",
    "summarize_paths",
    "write_summary",
    "write_trace",
    "write_acceptance",
    "write_yaml",
]


class ParseError(ConfigError):
    """Malformed input file; the message names the file and the row."""

    def __init__(self, path, row, message):
        super().__init__(f"{path}: row {row}: {message}")
        self.path = str(path)
        self.row = row


def fmt(x) -> str:
    return format(float(x), ".17g")


def _write(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def read_table(path, first=None, min_cols=1):
    """Read a numeric table with a header row; returns ``(header, array)``.

    ``first`` optionally fixes the name of the first column.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(path, 1, "file is empty") from None
        if len(header) < min_cols:
            raise ParseError(path, 1, f"expected at least {min_cols} columns")
        if first is not None and header[0] != first:
            raise ParseError(path, 1, f"first column must be named {first!r}")
        rows = []
        for i, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(path, i, f"expected {len(header)} columns, found {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ParseError(path, i, "non-numeric value") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(path, i, "non-finite value")
            rows.append(vals)
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def read_observations(path):
    """Observation file with header ``t, v1, ..., vm``; returns ``(t, V)``."""
    header, data = read_table(path, first="t", min_cols=2)
    if data.shape[0] == 0:
        raise ParseError(path, 2, "no observations")
    t = data[:, 0]
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        raise ParseError(path, int(bad[0]) + 3, "times must be strictly increasing")
    return t, data[:, 1:]


def write_observations(path, t, V):
    V = np.atleast_2d(np.asarray(V, dtype=float))
    header = ["t"] + [f"v{j + 1}" for j in range(V.shape[1])]
    _write(path, header, ([fmt(ti)] + [fmt(x) for x in v] for ti, v in zip(t, V)))


def write_path(path, t, X):
    X = np.asarray(X, dtype=float)
    header = ["t"] + [f"x{j + 1}" for j in range(X.shape[1])]
    _write(path, header, ([fmt(ti)] + [fmt(x) for x in row] for ti, row in zip(t, X)))


def write_samples(path, iterations, t, paths):
    """Saved paths as rows ``iteration, t, x1..xd``."""
    paths = np.asarray(paths, dtype=float)
    d = paths.shape[-1] if paths.ndim == 3 else 0
    header = ["iteration", "t"] + [f"x{j + 1}" for j in range(d)]

    def rows():
        for it, X in zip(iterations, paths):
            for ti, x in zip(t, X):
                yield [str(int(it)), fmt(ti)] + [fmt(v) for v in x]

    _write(path, header, rows())


def read_samples(path):
    """Inverse of :func:`write_samples`; returns ``(iterations, t, paths)``."""
    header, data = read_table(path, first="iteration", min_cols=3)
    if header[1] != "t":
        raise ParseError(path, 1, "second column must be named 't'")
    if data.shape[0] == 0:
        raise ParseError(path, 2, "no samples")
    its, start = np.unique(data[:, 0], return_index=True)
    order = np.argsort(start)
    its, start = its[order], start[order]
    bounds = list(start) + [data.shape[0]]
    n = bounds[1] - bounds[0]
    t = data[: n, 1]
    paths = []
    for j in range(len(its)):
        block = data[bounds[j]: bounds[j + 1]]
        if block.shape[0] != n or not np.array_equal(block[:, 1], t):
            raise ParseError(path, bounds[j] + 2, "path does not share the time grid of the first path")
        paths.append(block[:, 2:])
    return its.astype(np.int64), t, np.array(paths)


def summarize_paths(paths):
    """Per-knot mean and sample standard deviation (zero for a single path)."""
    paths = np.asarray(paths, dtype=float)
    mean = paths.mean(axis=0)
    sd = paths.std(axis=0, ddof=1) if paths.shape[0] > 1 else np.zeros_like(mean)
    return mean, sd


def write_summary(path, t, mean, sd, z=1.96):
    """Columns ``t, mean_j, sd_j, lower_j, upper_j`` with bands ``mean -/+ z sd``."""
    d = mean.shape[1]
    header = (["t"] + [f"mean_{j + 1}" for j in range(d)] + [f"sd_{j + 1}" for j in range(d)]
              + [f"lower_{j + 1}" for j in range(d)] + [f"upper_{j + 1}" for j in range(d)])
    lo, hi = mean - z * sd, mean + z * sd
    _write(path, header, ([fmt(ti)] + [fmt(v) for v in np.concatenate([m, s, a, b])]
                          for ti, m, s, a, b in zip(t, mean, sd, lo, hi)))


def write_trace(path, times, trace):
    """Rows ``iteration, t, x1..xd`` for every iteration and selected time."""
    d = trace.shape[-1]
    header = ["iteration", "t"] + [f"x{j + 1}" for j in range(d)]

    def rows():
        for it in range(trace.shape[0]):
            for ti, x in zip(times, trace[it]):
                yield [str(it), fmt(ti)] + [fmt(v) for v in x]

    _write(path, header, rows())


def write_acceptance(path, lambdas, log_psi, accepted):
    """Rows ``iteration, lambda, log_psi, accepted`` (log_psi of the chain after the step)."""
    _write(path, ["iteration", "lambda", "log_psi", "accepted"],
           ([str(i + 1), fmt(lam), fmt(lp), str(int(a))]
            for i, (lam, lp, a) in enumerate(zip(lambdas, log_psi[1:], accepted))))


def write_yaml(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)
