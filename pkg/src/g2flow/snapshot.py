"""Binary snapshot format for grid fields, plus line-oriented sidecar metadata.

Layout (little-endian):
    magic "G2SNAP01"
    u32 k                      number of active axes
    u32 axis ids               1-based, k of them
    u32 N_a                    points per active axis
    f64 L_a                    period per active axis
    u32 value-rank descriptor  0 scalar, 1 vector, 2 matrix, 3 symmetric
                               matrix (full 49 entries stored), 10+k for a
                               canonical k-form
    f64 payload                row-major point order, canonical component order

Round-trips are bit-exact: payloads are raw IEEE doubles.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .algebra import COUNT, DIM
from .manifold import Grid

MAGIC = b"G2SNAP01"

_FIXED_KINDS = {"scalar": 0, "vector": 1, "matrix": 2, "symmetric": 3}
_FIXED_SHAPES = {0: (), 1: (DIM,), 2: (DIM, DIM), 3: (DIM, DIM)}


def kind_code(kind):
    if kind in _FIXED_KINDS:
        return _FIXED_KINDS[kind]
    if kind.startswith("form") and kind[4:].isdigit():
        k = int(kind[4:])
        if 0 <= k <= DIM:
            return 10 + k
    raise ValueError(f"unknown field kind {kind!r}")


def kind_name(code):
    for name, c in _FIXED_KINDS.items():
        if c == code:
            return name
    if 10 <= code <= 10 + DIM:
        return f"form{code - 10}"
    raise ValueError(f"unknown field kind code {code}")


def value_shape(code):
    if code in _FIXED_SHAPES:
        return _FIXED_SHAPES[code]
    return (COUNT[code - 10],)


def atomic_write_bytes(path, data):
    """Write to a temp name and rename; interrupted writes never surface."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def save_field(path, grid, values, kind):
    """Serialize one field; ``kind`` names the per-point value type."""
    code = kind_code(kind)
    vshape = value_shape(code)
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape + vshape:
        raise ValueError(f"field shape {values.shape} does not match grid {grid.shape} + {vshape}")
    k = len(grid.axes)
    head = [MAGIC, struct.pack("<I", k)]
    head.append(struct.pack(f"<{k}I", *[a + 1 for a in grid.axes]))
    head.append(struct.pack(f"<{k}I", *grid.shape))
    head.append(struct.pack(f"<{k}d", *grid.lengths))
    head.append(struct.pack("<I", code))
    payload = np.ascontiguousarray(values, dtype="<f8").tobytes()
    atomic_write_bytes(path, b"".join(head) + payload)


def load_field(path):
    """Read a snapshot; returns (grid, values, kind name)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a G2SNAP01 file")
    off = len(MAGIC)
    (k,) = struct.unpack_from("<I", data, off)
    off += 4
    axes = struct.unpack_from(f"<{k}I", data, off)
    off += 4 * k
    shape = struct.unpack_from(f"<{k}I", data, off)
    off += 4 * k
    lengths = struct.unpack_from(f"<{k}d", data, off)
    off += 8 * k
    (code,) = struct.unpack_from("<I", data, off)
    off += 4
    grid = Grid(axes=tuple(a - 1 for a in axes), shape=shape, lengths=lengths)
    vshape = value_shape(code)
    count = int(np.prod(grid.shape + vshape, dtype=np.int64)) if grid.shape + vshape else 1
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off)
    values = values.reshape(grid.shape + vshape).astype(float)
    return grid, values, kind_name(code)


def format_float(x):
    return f"{float(x):.17g}"


def save_metadata(path, mapping):
    lines = []
    for key, value in mapping.items():
        if isinstance(value, float):
            lines.append(f"{key} = {format_float(value)}")
        else:
            lines.append(f"{key} = {value}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_metadata(path):
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            try:
                out[key] = float(value) if ("." in value or "e" in value or "E" in value or value.lstrip("+-").isdigit()) else value
            except ValueError:
                out[key] = value
    return out
