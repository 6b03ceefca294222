"""Binary array files and PGM export.

Layout (little endian)::

    12 bytes  magic b"DYNFFL-ARRAY"
    uint32    version (1 or 2)
    uint64    rows
    uint64    cols
    [version 2 only] 8 x float64 axis block:
              kind code, f_d, f_s, p, N, A/G, L, half_width
    rows*cols float64, row-major

Version 1 is the plain image layout; version 2 makes sinograms, recordings
and images self-describing.  Recordings are stored as ``(L p) x (N + 1)``.
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError

MAGIC = b"DYNFFL-ARRAY"
KINDS = {"array": 0, "image": 1, "reduced-sinogram": 2, "full-sinogram": 3, "recording": 4}
_KIND_NAMES = {v: k for k, v in KINDS.items()}
_AXIS_FIELDS = ("drive_frequency", "sampling_frequency", "angle_count",
                "samples_per_translation", "fov_half_width", "channel_count", "half_width")


@dataclass(frozen=True)
class AxisHeader:
    kind: str = "array"
    drive_frequency: float = 0.0
    sampling_frequency: float = 0.0
    angle_count: int = 0
    samples_per_translation: int = 0
    fov_half_width: float = 0.0
    channel_count: int = 0
    half_width: float = 0.0

    @classmethod
    def for_scanner(cls, kind, config, half_width: float = 0.0) -> "AxisHeader":
        return cls(kind, config.drive_frequency, config.sampling_frequency, config.angle_count,
                   config.samples_per_translation, config.fov_half_width,
                   config.channel_count, half_width)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in ("kind",) + _AXIS_FIELDS}


def write_array(path, array, header: AxisHeader | None = None) -> None:
    """Write a 2D float array; a header selects the self-describing version 2."""
    a = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    if a.ndim != 2:
        raise DomainError(f"expected a 2D array, got shape {a.shape}")
    version = 1 if header is None else 2
    buf = [MAGIC, struct.pack("<IQQ", version, a.shape[0], a.shape[1])]
    if header is not None:
        if header.kind not in KINDS:
            raise DomainError(f"unknown array kind {header.kind!r}")
        vals = [float(KINDS[header.kind])] + [float(getattr(header, f)) for f in _AXIS_FIELDS]
        buf.append(struct.pack("<8d", *vals))
    buf.append(a.tobytes())
    Path(path).write_bytes(b"".join(buf))


def read_array(path) -> tuple[np.ndarray, AxisHeader | None]:
    """Inverse of :func:`write_array`; returns ``(array, header or None)``."""
    raw = Path(path).read_bytes()
    if len(raw) < 32 or raw[:12] != MAGIC:
        raise DomainError(f"{path}: not a dynffl array file")
    version, rows, cols = struct.unpack_from("<IQQ", raw, 12)
    off = 32
    header = None
    if version == 2:
        vals = struct.unpack_from("<8d", raw, off)
        off += 64
        kind = _KIND_NAMES.get(int(vals[0]))
        if kind is None:
            raise DomainError(f"{path}: unknown array kind code {vals[0]}")
        header = AxisHeader(kind, vals[1], vals[2], int(vals[3]), int(vals[4]), vals[5],
                            int(vals[6]), vals[7])
    elif version != 1:
        raise DomainError(f"{path}: unsupported format version {version}")
    if len(raw) - off != 8 * rows * cols:
        raise DomainError(f"{path}: payload size does not match {rows}x{cols}")
    data = np.frombuffer(raw, dtype="<f8", offset=off).reshape(rows, cols).astype(float)
    return data, header


def to_gray(values, clamp: bool = False) -> np.ndarray:
    """Map to 8-bit gray: ``[0, max] -> [0, 255]``, or ``[0, 1]`` with clamping."""
    v = np.asarray(values, float)
    if clamp:
        v = np.clip(v, 0.0, 1.0)
        top = 1.0
    else:
        v = np.maximum(v, 0.0)
        top = float(v.max()) if v.size else 0.0
    if top <= 0:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.rint(v / top * 255.0).astype(np.uint8)


def write_pgm(path, values, clamp: bool = False) -> None:
    """Binary (P5) PGM export of a 2D array."""
    g = to_gray(values, clamp)
    if g.ndim != 2:
        raise DomainError("PGM export needs a 2D array")
    head = f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(head + g.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise DomainError(f"{path}: not a binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w)
