"""On-disk artifacts: trace CSV, potential snapshots and JSON summaries.

Snapshot layout (little-endian)::

    8 bytes   magic b"TMAFPHI1"
    int32     n
    int32     N
    float64   t
    float64 * N^(2n)   samples, row-major over (x1, y1[, x2, y2])
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .functionals import EnergyRecord
from .grid import ScalarField, make_grid

MAGIC = b"TMAFPHI1"
_HEADER = struct.Struct("<8siid")


def write_field(path: Path, f: ScalarField, t: float) -> None:
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, g.n, g.N, float(t)))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes(order="C"))


def read_field(path: Path) -> tuple[float, ScalarField]:
    raw = Path(path).read_bytes()
    magic, n, N, t = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a potential snapshot")
    g = make_grid(n, N)
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if vals.size != g.size:
        raise ValueError(f"{path}: expected {g.size} samples, found {vals.size}")
    return t, ScalarField(g, vals.reshape(g.shape).astype(float))


def checkpoint_name(t: float) -> str:
    return f"phi_t{t:010.4f}.bin"


def write_trace(path: Path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EnergyRecord.columns())
        for r in records:
            w.writerow([repr(float(x)) for x in r.row()])


def read_trace(path: Path) -> list[EnergyRecord]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != EnergyRecord.columns():
            raise ValueError(f"{path}: unexpected columns {header}")
        return [EnergyRecord(*(float(x) for x in row)) for row in rd]


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if v != v:
            return "nan"
        if v in (float("inf"), float("-inf")):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, data: dict) -> None:
    Path(path).write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())
