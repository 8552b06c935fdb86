"""Field binary/CSV formats and a deterministic CSV writer."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grid import GridField, ShapeError

MAGIC = b"SCLBFLD\0"
VERSION = 1
_HEADER = struct.Struct("<8sIIII")  # magic, version, dimension, components, N


def write_field_binary(f: GridField, path) -> None:
    """Header then row-major little-endian float64 real samples."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, f.dimension, f.components, f.resolution))
        fh.write(np.ascontiguousarray(f.real_values, dtype="<f8").tobytes(order="C"))


def read_field_binary(path) -> GridField:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ShapeError(f"{path}: truncated header")
    magic, version, d, c, n = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise ShapeError(f"{path}: not a field file (magic/version mismatch)")
    count = c * n**d
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != count:
        raise ShapeError(f"{path}: expected {count} values, found {data.size}")
    return GridField.from_real(data.reshape((c,) + (n,) * d).astype(float))


def write_field_csv(f: GridField, path, max_resolution: int = 64) -> None:
    """One row per grid point: integer indices then component values."""
    if f.resolution > max_resolution:
        raise ShapeError(f"CSV export limited to N <= {max_resolution}")
    d, c = f.dimension, f.components
    header = [f"i{a}" for a in range(d)] + [f"c{j}" for j in range(c)]
    rows = []
    for idx in np.ndindex(*(f.resolution,) * d):
        rows.append(list(idx) + [f.real_values[(j,) + idx] for j in range(c)])
    write_csv(path, header, rows)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> Path:
    """Fixed column order, shortest round-trip float formatting, LF endings."""
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row width {len(row)} != header width {len(header)}")
        lines.append(",".join(_fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n")
    return path
