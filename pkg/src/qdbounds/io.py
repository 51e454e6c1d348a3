"""Report serialisation: CSV, JSON lines, JSON and the binary matrix dump."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import struct
from pathlib import Path

import numpy as np

MATRIX_MAGIC = b"QDGMAT\x00\x01"
_HEADER = struct.Struct("<8sII")


def to_jsonable(obj):
    """Recursively convert dataclasses, numpy values and non-finite floats."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return to_jsonable(obj.to_dict())
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(obj, complex):
        return [to_jsonable(obj.real), to_jsonable(obj.imag)]
    return obj


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return v


def write_csv(path, rows, columns) -> Path:
    """RFC 4180 style CSV (CRLF, minimal quoting); floats use ``repr`` so output is exact."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])
    return path


def read_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_jsonl(path, records) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(to_jsonable(rec), sort_keys=True, allow_nan=False))
            fh.write("\n")
    return path


def read_jsonl(path):
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n",
                    encoding="utf-8")
    return path


def dump_matrix(path, M) -> Path:
    """Write ``M`` as a 16-byte header ``{magic, rows, cols}`` and row-major little-endian complex64."""
    M = np.asarray(M)
    if M.ndim != 2:
        raise ValueError("matrix dump needs a 2-d array")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, M.shape[0], M.shape[1]))
        fh.write(np.ascontiguousarray(M, dtype="<c8").tobytes())
    return path


def load_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MATRIX_MAGIC:
        raise ValueError("not a matrix dump (bad magic)")
    body = data[_HEADER.size:]
    if len(body) != rows * cols * 8:
        raise ValueError("truncated matrix dump")
    return np.frombuffer(body, dtype="<c8").reshape(rows, cols).copy()
