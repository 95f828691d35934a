"""Binary snapshots and CSV series.

Snapshot layout (little endian): magic ``VKDS``, format version (uint32),
nx, ny (uint32), time (float64), then u and u_t as float64 arrays of the
interior nodes in row-major ``(ny, nx)`` order.
"""
from __future__ import annotations

import csv
from pathlib import Path
import struct

import numpy as np

from .discretization import Grid, ScalarField
from .dynamics import SERIES_COLUMNS, PlateState
from .errors import DataError

__all__ = ["MAGIC", "FORMAT_VERSION", "write_snapshot", "read_snapshot", "write_series_csv",
           "read_series_csv", "write_rows_csv", "fmt17"]

MAGIC = b"VKDS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIId")


def fmt17(x) -> str:
    """Decimal text with 17 significant digits (round-trips float64)."""
    return "%.17g" % float(x)


def write_snapshot(path, state: PlateState) -> None:
    g = state.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, g.nx, g.ny, float(state.t)))
        fh.write(np.ascontiguousarray(state.u.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.ut.values, dtype="<f8").tobytes())


def read_snapshot(path, grid: Grid | None = None):
    """Read a snapshot.

    Returns a :class:`PlateState` when ``grid`` is given, else the tuple
    ``(t, u, ut)`` of raw arrays.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataError("snapshot too short")
    magic, version, nx, ny, t = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataError(f"bad snapshot magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported snapshot version {version}")
    n = nx * ny
    if len(data) != _HEADER.size + 16 * n:
        raise DataError("snapshot size does not match its header")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    u = body[:n].reshape(ny, nx).astype(np.float64)
    ut = body[n:].reshape(ny, nx).astype(np.float64)
    if grid is None:
        return t, u, ut
    if (grid.nx, grid.ny) != (nx, ny):
        raise DataError(f"snapshot is {nx}x{ny}, grid is {grid.nx}x{grid.ny}")
    return PlateState(ScalarField(grid, u), ScalarField(grid, ut), t)


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt17(x) if isinstance(x, (float, np.floating)) else x for x in row])


def write_series_csv(path, times, series: dict) -> None:
    """Write the diagnostic series with the fixed column order."""
    cols = [np.asarray(times, dtype=float)] + [np.asarray(series[c], dtype=float) for c in SERIES_COLUMNS[1:]]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(SERIES_COLUMNS) + "\n")
        for row in zip(*cols):
            fh.write(",".join(fmt17(x) for x in row) + "\n")


def read_series_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != SERIES_COLUMNS:
        raise DataError("unexpected series.csv header")
    arr = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, len(SERIES_COLUMNS))
    return {c: arr[:, i] for i, c in enumerate(SERIES_COLUMNS)}
