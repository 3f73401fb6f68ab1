"""Shared grid, box and mask types plus elementary raster helpers.

Grids are plain 2-D numpy arrays indexed ``[row, col]`` (``[y, x]``) with the
origin at the top-left pixel.  Scalar grids are float64, gray grids uint8 and
binary grids uint8 with values in {0, 1}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "PixelPoint",
    "BBox",
    "Detection",
    "InstanceMask",
    "round_half_away",
    "normalize_to_gray",
    "iou",
    "box_iou",
    "mask_bbox",
    "percentile",
    "population_mean_std",
    "normal_cdf",
]


class PixelPoint(NamedTuple):
    x: int
    y: int


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with inclusive integer bounds."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ValueError(f"degenerate box {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def aspect(self) -> float:
        return self.width / self.height

    def contains(self, p: PixelPoint) -> bool:
        return self.x0 <= p.x <= self.x1 and self.y0 <= p.y <= self.y1

    def within(self, width: int, height: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 < width and self.y1 < height

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1 + 1), slice(self.x0, self.x1 + 1)

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class Detection:
    box: BBox
    confidence: float
    label: str = ""

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class InstanceMask:
    """Binary mask with a cached pixel count and the decoder's quality score."""

    mask: np.ndarray
    quality: float = 1.0
    area: int = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise ValueError("mask must be 2-D")
        m = (m != 0).astype(np.uint8)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "area", int(m.sum()))
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError(f"quality {self.quality} outside [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def bbox(self) -> BBox | None:
        return mask_bbox(self.mask)

    def same_pixels(self, other: "InstanceMask") -> bool:
        return self.mask.shape == other.mask.shape and np.array_equal(self.mask, other.mask)


def round_half_away(x):
    """Round to the nearest integer, ties away from zero (numpy rounds ties to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def normalize_to_gray(dm: np.ndarray) -> np.ndarray:
    """Min-max map a scalar grid onto uint8 [0, 255]; a flat grid maps to zeros."""
    dm = np.asarray(dm, dtype=np.float64)
    if dm.size == 0:
        raise ValueError("empty grid")
    lo, hi = float(dm.min()), float(dm.max())
    if hi <= lo:
        return np.zeros(dm.shape, dtype=np.uint8)
    g = round_half_away((dm - lo) * 255.0 / (hi - lo))
    return np.clip(g, 0, 255).astype(np.uint8)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a) != 0
    b = np.asarray(b) != 0
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def box_iou(a: BBox, b: BBox) -> float:
    ix = min(a.x1, b.x1) - max(a.x0, b.x0) + 1
    iy = min(a.y1, b.y1) - max(a.y0, b.y0) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def mask_bbox(mask: np.ndarray) -> BBox | None:
    """Tight inclusive bounding box of the nonzero pixels, or None when empty."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def percentile(values: Sequence[float], p: float) -> float:
    """Linear-interpolation percentile on the sorted sample, index ``p/100 * (n-1)``."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("percentile of empty sample")
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"percentile {p} outside [0, 100]")
    pos = (p / 100.0) * (v.size - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, v.size - 1)
    frac = pos - lo
    return float(v[lo] + (v[hi] - v[lo]) * frac)


def population_mean_std(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("statistics of empty sample")
    mu = float(v.mean())
    return mu, float(np.sqrt(np.mean((v - mu) ** 2)))


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))
