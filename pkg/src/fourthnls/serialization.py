"""Flat binary container for fields and traces, with a JSON sidecar.

Layout (little-endian)::

    magic    4 bytes  b"FNLS"
    version  u32
    dim      u32
    frames   u32      1 for a single field
    N        u32 x dim
    L        f64 x dim
    payload  complex64 x frames x prod(N), row-major

The sidecar ``<path>.json`` carries free-form metadata plus the sample
instants of a trace.  Round trips are bit-exact on the complex64 payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .norms import SpaceTimeTrace
from .spectral import Field, Grid

__all__ = ["FormatError", "save_field", "load_field", "save_trace", "load_trace", "read_header"]

MAGIC = b"FNLS"
VERSION = 1
_PathLike = Union[str, Path]


class FormatError(ValueError):
    pass


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _write(path: Path, grid: Grid, payload: np.ndarray, meta: dict) -> None:
    frames = payload.shape[0]
    head = struct.pack("<4sIII", MAGIC, VERSION, grid.dim, frames)
    head += struct.pack(f"<{grid.dim}I", *grid.points_per_axis)
    head += struct.pack(f"<{grid.dim}d", *grid.half_length)
    data = np.ascontiguousarray(payload, dtype="<c8")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(data.tobytes(order="C"))
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_header(path: _PathLike) -> tuple[Grid, int, int]:
    """``(grid, frames, payload_offset)`` of a container file."""
    path = Path(path)
    with open(path, "rb") as fh:
        fixed = fh.read(16)
        if len(fixed) != 16:
            raise FormatError(f"{path}: truncated header")
        magic, version, dim, frames = struct.unpack("<4sIII", fixed)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if dim not in (1, 2):
            raise FormatError(f"{path}: unsupported dimension {dim}")
        rest = fh.read(12 * dim)
        if len(rest) != 12 * dim:
            raise FormatError(f"{path}: truncated header")
    ns = struct.unpack(f"<{dim}I", rest[: 4 * dim])
    ls = struct.unpack(f"<{dim}d", rest[4 * dim :])
    return Grid(dim, ns, ls), frames, 16 + 12 * dim


def _read_payload(path: Path) -> tuple[Grid, np.ndarray]:
    grid, frames, offset = read_header(path)
    raw = path.read_bytes()[offset:]
    expected = frames * grid.size * 8
    if len(raw) != expected:
        raise FormatError(f"{path}: payload has {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<c8").reshape((frames,) + grid.shape)
    return grid, data


def _read_meta(path: Path) -> dict:
    side = _sidecar(path)
    return json.loads(side.read_text()) if side.exists() else {}


def save_field(path: _PathLike, f: Field, meta: Optional[dict] = None) -> None:
    body = {"kind": "field", "meta": meta or {}}
    _write(Path(path), f.grid, f.samples[None], body)


def load_field(path: _PathLike) -> tuple[Field, dict]:
    path = Path(path)
    grid, data = _read_payload(path)
    if data.shape[0] != 1:
        raise FormatError(f"{path}: holds {data.shape[0]} frames, expected a single field")
    return Field(grid, data[0].astype(np.complex128)), _read_meta(path).get("meta", {})


def save_trace(path: _PathLike, trace: SpaceTimeTrace, meta: Optional[dict] = None) -> None:
    body = {"kind": "trace", "times": [float(t) for t in trace.times], "meta": meta or {}}
    _write(Path(path), trace.grid, trace.samples, body)


def load_trace(path: _PathLike) -> tuple[SpaceTimeTrace, dict]:
    path = Path(path)
    grid, data = _read_payload(path)
    side = _read_meta(path)
    times = side.get("times")
    if times is None or len(times) != data.shape[0]:
        raise FormatError(f"{path}: sidecar lacks matching sample instants")
    return SpaceTimeTrace(grid, times, data.astype(np.complex128)), side.get("meta", {})
