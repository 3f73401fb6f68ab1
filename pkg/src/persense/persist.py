"""Byte-deterministic file formats: PSG1 grids, RLE mask records, PGM, CSV reports.

PSG1 layout (little-endian)::

    b"PSG1" | u32 width | u32 height | u8 dtype (0=float32, 1=uint8) | payload

The payload is row-major and holds ``width * height`` values.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import InstanceMask

__all__ = [
    "GridFormatError",
    "BadMagicError",
    "TruncatedError",
    "DtypeMismatchError",
    "encode_grid",
    "decode_grid",
    "write_grid",
    "read_grid",
    "MaskRecord",
    "rle_encode",
    "rle_decode",
    "write_masks",
    "read_masks",
    "export_pgm",
    "REPORT_HEADER",
    "report_row",
    "write_report",
    "read_report",
    "atomic_write_bytes",
    "atomic_write_text",
]

MAGIC = b"PSG1"
_HEADER = struct.Struct("<4sIIB")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1}


class GridFormatError(ValueError):
    code = "grid-format"


class BadMagicError(GridFormatError):
    code = "bad-magic"


class TruncatedError(GridFormatError):
    code = "truncated"


class DtypeMismatchError(GridFormatError):
    code = "dtype-mismatch"


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_grid(grid: np.ndarray) -> bytes:
    g = np.asarray(grid)
    if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
        raise ValueError("grid must be a nonempty 2-D array")
    code = _CODES.get(g.dtype)
    if code is None:
        raise DtypeMismatchError(f"PSG1 stores float32 or uint8, got {g.dtype}")
    h, w = g.shape
    payload = np.ascontiguousarray(g, dtype=_DTYPES[code]).tobytes()
    return _HEADER.pack(MAGIC, w, h, code) + payload


def decode_grid(data: bytes, dtype=None) -> np.ndarray:
    if len(data) < _HEADER.size:
        if data[:4] != MAGIC[: len(data)]:
            raise BadMagicError("not a PSG1 grid")
        raise TruncatedError("header truncated")
    magic, w, h, code = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if code not in _DTYPES:
        raise DtypeMismatchError(f"unknown dtype code {code}")
    dt = _DTYPES[code]
    if dtype is not None and np.dtype(dtype) != dt.newbyteorder("="):
        raise DtypeMismatchError(f"file holds {dt}, expected {np.dtype(dtype)}")
    need = w * h * dt.itemsize
    body = data[_HEADER.size:]
    if len(body) < need:
        raise TruncatedError(f"payload holds {len(body)} of {need} bytes")
    if len(body) > need:
        raise GridFormatError(f"{len(body) - need} trailing bytes")
    return np.frombuffer(body, dtype=dt).reshape(h, w).astype(dt.newbyteorder("="))


def write_grid(path, grid: np.ndarray) -> None:
    atomic_write_bytes(path, encode_grid(grid))


def read_grid(path, dtype=None) -> np.ndarray:
    return decode_grid(Path(path).read_bytes(), dtype)


def rle_encode(mask: np.ndarray) -> list[int]:
    """Alternating run lengths of the row-major mask, starting with a zero-run."""
    flat = (np.asarray(mask).ravel() != 0).astype(np.int8)
    if flat.size == 0:
        return [0]
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def rle_decode(runs: Sequence[int], width: int, height: int) -> np.ndarray:
    if sum(runs) != width * height:
        raise ValueError(f"runs sum to {sum(runs)}, expected {width * height}")
    vals = np.arange(len(runs)) % 2
    flat = np.repeat(vals.astype(np.uint8), np.asarray(runs, dtype=np.int64))
    return flat.reshape(height, width)


@dataclass(frozen=True)
class MaskRecord:
    width: int
    height: int
    rle: list[int]
    quality: float

    @classmethod
    def from_mask(cls, m: InstanceMask) -> "MaskRecord":
        h, w = m.shape
        return cls(w, h, rle_encode(m.mask), float(m.quality))

    def to_mask(self) -> InstanceMask:
        return InstanceMask(rle_decode(self.rle, self.width, self.height), self.quality)

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "rle": list(self.rle),
                "quality": self.quality}

    @classmethod
    def from_dict(cls, d: dict) -> "MaskRecord":
        rec = cls(int(d["width"]), int(d["height"]), [int(r) for r in d["rle"]], float(d["quality"]))
        if sum(rec.rle) != rec.width * rec.height:
            raise ValueError("mask record runs do not cover the grid")
        return rec


def write_masks(path, masks: Iterable[InstanceMask]) -> None:
    lines = [json.dumps(MaskRecord.from_mask(m).to_dict(), separators=(",", ":")) for m in masks]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_masks(path) -> list[InstanceMask]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(MaskRecord.from_dict(json.loads(line)).to_mask())
    return out


def export_pgm(gray: np.ndarray, path, binary: bool | None = None) -> None:
    """Binary P5 with maxval 255.  Binary masks (bool dtype, or ``binary=True``) map to {0, 255}."""
    g = np.asarray(gray)
    if binary is None:
        binary = g.dtype == bool
    if binary:
        g = np.where(g != 0, 255, 0)
    g = np.clip(g, 0, 255).astype(np.uint8)
    h, w = g.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode("ascii") + g.tobytes())


REPORT_HEADER = ("image_id", "variant", "miou", "mae", "rmse", "precision", "recall", "bin", "cv")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def report_row(r) -> list[str]:
    return [r.image_id, r.variant, _fmt(r.miou), _fmt(r.mae), _fmt(r.rmse),
            _fmt(r.prompt_precision), _fmt(r.prompt_recall), r.bin, _fmt(r.cv_scale)]


def write_report(reports: Sequence, path, bins: bool = False) -> None:
    """CSV of per-image rows, optional per-density-bin rows, then one aggregate row.

    An empty report list yields a header-only file.
    """
    from .metrics import DENSITY_BINS, aggregate

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    reports = list(reports)
    for r in reports:
        w.writerow(report_row(r))
    if reports:
        if bins:
            for b in DENSITY_BINS:
                members = [r for r in reports if r.bin == b]
                if members:
                    row = aggregate(members, image_id=f"bin:{b}")
                    row.bin = b
                    w.writerow(report_row(row))
        w.writerow(report_row(aggregate(reports)))
    atomic_write_text(path, buf.getvalue())


def read_report(path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != REPORT_HEADER:
            raise ValueError(f"unexpected report header {reader.fieldnames}")
        for row in reader:
            for k in ("miou", "mae", "rmse", "precision", "recall", "cv"):
                row[k] = float(row[k])
            rows.append(row)
    return rows
