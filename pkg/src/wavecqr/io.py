"""CSV / JSON readers and writers.

Every CSV starts with ``#`` comment lines holding provenance as ``# key: json``
followed by a header row. Dataset directories contain::

    curves.csv    sample,predictor,x0..x{N-1}     (one row per sample and predictor)
    scalars.csv   sample,u1..uq
    response.csv  sample,y

Simulated data also carry ``truth.csv`` (true slope curves and wavelet
coefficients) and ``truth.json`` (scalar truth and the noise scale).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

from .model import CoefficientSet, Dataset


class DataFormatError(ValueError):
    def __init__(self, path, msg: str, lineno: int | None = None):
        where = f"{path}:{lineno}" if lineno is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.path, self.lineno = str(path), lineno


def fmt(v) -> str:
    return format(float(v), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj))


def write_csv(path, header, rows, provenance: dict | None = None) -> None:
    buf = io.StringIO()
    for key, val in sorted((provenance or {}).items()):
        buf.write(f"# {key}: {json.dumps(_jsonable(val), sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    """(provenance dict, header, rows as lists of strings, first data line number)."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataFormatError(path, exc.strerror or str(exc)) from None
    prov, start = {}, 0
    while start < len(lines) and lines[start].startswith("#"):
        key, _, val = lines[start][1:].partition(":")
        try:
            prov[key.strip()] = json.loads(val)
        except json.JSONDecodeError:
            prov[key.strip()] = val.strip()
        start += 1
    if start >= len(lines):
        raise DataFormatError(path, "missing header row")
    rows = list(csv.reader(lines[start:]))
    return prov, rows[0], rows[1:], start + 2


def _floats(path, row, lineno):
    try:
        vals = [float(v) for v in row]
    except ValueError:
        raise DataFormatError(path, "non-numeric value", lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise DataFormatError(path, "non-finite value", lineno)
    return vals


def write_dataset(directory, data: Dataset, provenance: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n, m, N = data.curves.shape
    write_csv(d / "curves.csv", ["sample", "predictor"] + [f"x{j}" for j in range(N)],
              ([i + 1, l + 1, *data.curves[i, l]] for i in range(n) for l in range(m)), provenance)
    write_csv(d / "scalars.csv", ["sample"] + [f"u{j + 1}" for j in range(data.q)],
              ([i + 1, *data.scalars[i]] for i in range(n)), provenance)
    write_csv(d / "response.csv", ["sample", "y"], ([i + 1, data.response[i]] for i in range(n)), provenance)


def read_dataset(directory) -> Dataset:
    d = Path(directory)
    if not d.is_dir():
        raise DataFormatError(d, "dataset directory not found")
    _, _, rows, line0 = read_csv(d / "response.csv")
    y = {}
    for off, row in enumerate(rows):
        if len(row) != 2:
            raise DataFormatError(d / "response.csv", "expected sample,y", line0 + off)
        s, v = _floats(d / "response.csv", row, line0 + off)
        y[int(s)] = v
    samples = sorted(y)
    if samples != list(range(1, len(samples) + 1)):
        raise DataFormatError(d / "response.csv", "samples must be numbered 1..n")
    n = len(samples)

    _, header, rows, line0 = read_csv(d / "scalars.csv")
    q = len(header) - 1
    u = np.full((n, q), np.nan)
    for off, row in enumerate(rows):
        vals = _floats(d / "scalars.csv", row, line0 + off)
        i = int(vals[0]) - 1
        if len(vals) != q + 1 or not 0 <= i < n:
            raise DataFormatError(d / "scalars.csv", "row shape or sample index is wrong", line0 + off)
        u[i] = vals[1:]

    _, header, rows, line0 = read_csv(d / "curves.csv")
    N = len(header) - 2
    entries = {}
    for off, row in enumerate(rows):
        vals = _floats(d / "curves.csv", row, line0 + off)
        if len(vals) != N + 2:
            raise DataFormatError(d / "curves.csv", f"expected {N + 2} fields", line0 + off)
        entries[(int(vals[0]) - 1, int(vals[1]) - 1)] = vals[2:]
    m = 1 + max((l for _, l in entries), default=-1)
    x = np.full((n, m, N), np.nan)
    for (i, l), vals in entries.items():
        if not 0 <= i < n or l < 0:
            raise DataFormatError(d / "curves.csv", f"sample {i + 1} / predictor {l + 1} out of range")
        x[i, l] = vals
    if np.isnan(x).any() or np.isnan(u).any():
        raise DataFormatError(d, "some sample is missing a curve or scalar row")
    return Dataset(x, u, np.array([y[s] for s in samples]))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_truth(directory, beta_true, theta_true, gamma_true, sigma: float, alpha: float = 0.0,
                provenance: dict | None = None, extra: dict | None = None) -> None:
    """``truth.csv`` plus a ``truth.json`` sidecar with scalar truth, the true
    supports and checksums of every CSV in the directory."""
    d = Path(directory)
    m, N = beta_true.shape
    rows = [["beta", l + 1, *beta_true[l]] for l in range(m)]
    rows += [["theta", l + 1, *theta_true[l]] for l in range(m)]
    write_csv(d / "truth.csv", ["kind", "predictor"] + [f"c{j}" for j in range(N)], rows, provenance)
    sidecar = {
        "gamma": gamma_true, "alpha": alpha, "sigma": sigma,
        "true_groups": [l + 1 for l in range(m) if np.any(beta_true[l] != 0)],
        "theta_nonzeros": [int(np.count_nonzero(theta_true[l])) for l in range(m)],
        "sha256": {p.name: file_sha256(p) for p in sorted(d.glob("*.csv"))},
        **(extra or {}),
    }
    write_json(d / "truth.json", sidecar)


def read_truth(directory):
    """(beta_true m x N, theta_true m x N, gamma_true)."""
    d = Path(directory)
    _, header, rows, line0 = read_csv(d / "truth.csv")
    beta, theta = {}, {}
    for off, row in enumerate(rows):
        if not row or row[0] not in ("beta", "theta"):
            raise DataFormatError(d / "truth.csv", "kind must be beta or theta", line0 + off)
        vals = _floats(d / "truth.csv", row[1:], line0 + off)
        (beta if row[0] == "beta" else theta)[int(vals[0]) - 1] = vals[1:]
    m = len(beta)
    if sorted(beta) != list(range(m)) or sorted(theta) != list(range(m)):
        raise DataFormatError(d / "truth.csv", "predictors must be numbered 1..m for both kinds")
    meta = json.loads((d / "truth.json").read_text()) if (d / "truth.json").exists() else {}
    return (np.array([beta[l] for l in range(m)]), np.array([theta[l] for l in range(m)]),
            np.asarray(meta.get("gamma", []), dtype=float))


def write_coefficients(path, params: CoefficientSet, taus, provenance: dict | None = None) -> None:
    rows = [["alpha", k + 1, 0, float(tau), params.alpha[k]] for k, tau in enumerate(np.atleast_1d(taus))]
    rows += [["gamma", j + 1, 0, "", params.gamma[j]] for j in range(params.gamma.size)]
    blocks = params.blocks()
    rows += [["theta", l + 1, j, "", blocks[l, j]] for l in range(params.m) for j in range(params.N)]
    write_csv(path, ["parameter", "index", "position", "tau", "value"], rows, provenance)


def read_coefficients(path) -> tuple[CoefficientSet, np.ndarray]:
    _, _, rows, line0 = read_csv(path)
    alpha, taus, gamma, theta = {}, {}, {}, {}
    for off, row in enumerate(rows):
        if len(row) != 5:
            raise DataFormatError(path, "expected 5 fields", line0 + off)
        kind, idx, pos, tau, val = row
        try:
            idx, pos, val = int(idx), int(pos), float(val)
        except ValueError:
            raise DataFormatError(path, "bad index or value", line0 + off) from None
        if kind == "alpha":
            alpha[idx], taus[idx] = val, float(tau)
        elif kind == "gamma":
            gamma[idx] = val
        elif kind == "theta":
            theta[(idx, pos)] = val
        else:
            raise DataFormatError(path, f"unknown parameter {kind!r}", line0 + off)
    m = max((l for l, _ in theta), default=0)
    N = max((j for _, j in theta), default=-1) + 1
    th = np.zeros((m, N))
    for (l, j), v in theta.items():
        th[l - 1, j] = v
    K, q = len(alpha), len(gamma)
    params = CoefficientSet([alpha[k + 1] for k in range(K)], [gamma[j + 1] for j in range(q)], th.reshape(-1), m, N)
    return params, np.array([taus[k + 1] for k in range(K)])


def write_curves(path, betas, provenance: dict | None = None) -> None:
    m, N = betas.shape
    write_csv(path, ["predictor"] + [f"b{j}" for j in range(N)], ([l + 1, *betas[l]] for l in range(m)), provenance)


def write_records(path, records: list[dict], provenance: dict | None = None) -> None:
    """List of flat dicts as CSV, columns in first-seen order."""
    cols = []
    for rec in records:
        cols += [k for k in rec if k not in cols]
    write_csv(path, cols, ([rec.get(c, "") for c in cols] for rec in records), provenance)
