"""Dataset and report serialization.

Formats:

* CSV: RFC-4180, a header row naming the ``d`` columns, one sample per line.
* binary: ``b"TDFD"``, ``u32 n``, ``u32 d`` then ``n*d`` little-endian float64
  values in row-major order.
* JSON: one document per file; datasets are stored as ``{"data": [[...]]}``.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"TDFD"
_HEADER = struct.Struct("<4sII")


def write_csv_matrix(path, data: np.ndarray, columns=None) -> None:
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if columns is None:
        columns = [f"x{j}" for j in range(data.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in data:
            w.writerow([repr(float(v)) for v in row])


def read_csv_matrix(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path}: empty CSV file")
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2:
        raise DataError(f"{path}: rows have differing lengths")
    return data


def write_binary_matrix(path, data: np.ndarray) -> None:
    data = np.ascontiguousarray(np.atleast_2d(data), dtype="<f8")
    n, d = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, d))
        fh.write(data.tobytes(order="C"))


def read_binary_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, n, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size :]
    if len(body) != 8 * n * d:
        raise DataError(f"{path}: expected {8 * n * d} payload bytes for {n}x{d}, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return read_binary_matrix(path)
    if head.lstrip().startswith(b"{"):
        try:
            data = np.asarray(read_json(path)["data"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: expected a JSON document with a 'data' matrix ({exc})") from None
        if data.ndim != 2:
            raise DataError(f"{path}: 'data' must be a matrix")
        return data
    return read_csv_matrix(path)


def write_matrix(path, data: np.ndarray, fmt: str) -> None:
    if fmt == "bin":
        write_binary_matrix(path, data)
    elif fmt == "json":
        write_json(path, {"data": np.asarray(data).tolist()})
    else:
        write_csv_matrix(path, data)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_rows_csv(path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _jsonable(r.get(k)) for k in columns})
