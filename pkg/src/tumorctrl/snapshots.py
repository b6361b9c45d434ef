"""On-disk formats: field snapshots (text and binary), manifests, histories.

Text snapshots carry a single header line ``# nx,ny,hx,hy,t`` followed by
one comma-separated line per grid row in row-major order.  Values are
written with %.17g so a text round trip reproduces the doubles exactly.

Binary snapshots are little-endian: magic ``TCF1``, u32 nx, u32 ny,
f64 hx, f64 hy, f64 t, then the node values as f64 in row-major order.
"""
import struct

import numpy as np

from .grid import Grid, ScalarField

_MAGIC = b"TCF1"
_FMT = "%.17g"


def write_snapshot_csv(path, field, t=0.0):
    g = field.grid
    with open(path, "w") as fh:
        fh.write(
            "# %d,%d,%s,%s,%s\n" % (g.nx, g.ny, _FMT % g.hx, _FMT % g.hy, _FMT % t)
        )
        for row in field.values:
            fh.write(",".join(_FMT % v for v in row) + "\n")


def read_snapshot_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing snapshot header")
        parts = header[1:].split(",")
        if len(parts) != 5:
            raise ValueError(f"{path}: malformed snapshot header {header!r}")
        nx, ny = int(parts[0]), int(parts[1])
        hx, hy, t = (float(p) for p in parts[2:])
        rows = [
            np.array([float(v) for v in line.split(",")]) for line in fh if line.strip()
        ]
    values = np.vstack(rows)
    grid = Grid(nx, ny, hx, hy)
    if values.shape != grid.shape:
        raise ValueError(f"{path}: {values.shape} values for grid {grid.shape}")
    return ScalarField(grid, values), t


def write_snapshot_bin(path, field, t=0.0):
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIddd", g.nx, g.ny, g.hx, g.hy, t))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_snapshot_bin(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        nx, ny, hx, hy, t = struct.unpack("<IIddd", fh.read(8 + 24))
        count = (nx + 1) * (ny + 1)
        data = np.frombuffer(fh.read(count * 8), dtype="<f8")
        if data.size != count:
            raise ValueError(f"{path}: truncated payload")
    grid = Grid(nx, ny, hx, hy)
    return ScalarField(grid, data.reshape(grid.shape).copy()), t


def write_manifest(path, entries):
    """Write a key = value manifest with deterministic ordering."""
    with open(path, "w") as fh:
        for key in sorted(entries):
            fh.write(f"{key} = {entries[key]}\n")


def read_manifest(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


HISTORY_HEADER = "iteration,cost,stationarity,step,ball_active"


def write_history(path, records):
    """Write optimizer iteration records as CSV.

    Each record is (iteration, cost, stationarity, step, ball_active).
    """
    with open(path, "w") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for it, cost, stat, step, ball in records:
            fh.write(
                "%d,%s,%s,%s,%d\n" % (it, _FMT % cost, _FMT % stat, _FMT % step, ball)
            )
