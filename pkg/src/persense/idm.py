"""Instance detection: density map -> candidate point prompts.

Two complementary routes are provided.  The contour route thresholds the
gray-scale density map, erodes it, labels connected regions, splits regions
whose area is an outlier of the area distribution with a distance transform,
and emits one intensity-weighted centroid per region.  The peak route emits
strict local maxima above ``mean + alpha * std`` of the gray map.  Hybrid mode
merges both.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy import ndimage

from .core import PixelPoint, normal_cdf, normalize_to_gray, population_mean_std, round_half_away

__all__ = [
    "Contour",
    "ContourStats",
    "CandidatePoint",
    "IdmConfig",
    "binarize",
    "erode3x3",
    "extract_contours",
    "contour_stats",
    "composite_probability",
    "distance_transform",
    "split_composite",
    "centroid",
    "detect_peaks",
    "contour_path",
    "run_idm",
]

CENTROID_EPS = 1e-6
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class Contour:
    """One 8-connected region.

    ``members`` and ``boundary`` are ``(n, 2)`` integer arrays of ``(x, y)``
    pairs in row-major order.  Boundary pixels are members with at least one
    4-neighbour outside the region (or outside the image).
    """

    members: np.ndarray
    boundary: np.ndarray

    @property
    def area(self) -> int:
        return int(self.members.shape[0])

    def bbox(self) -> tuple[int, int, int, int]:
        xs, ys = self.members[:, 0], self.members[:, 1]
        return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())

    def member_mask(self, shape: tuple[int, int]) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        m[self.members[:, 1], self.members[:, 0]] = True
        return m

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "Contour":
        mask = np.asarray(mask, dtype=bool)
        ys, xs = np.nonzero(mask)
        members = np.column_stack([xs, ys]).astype(np.int64)
        padded = np.pad(mask, 1, constant_values=False)
        inner = (
            padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
        )
        edge = mask & ~inner
        by, bx = np.nonzero(edge)
        boundary = np.column_stack([bx, by]).astype(np.int64)
        return cls(members, boundary)


@dataclass(frozen=True)
class ContourStats:
    mu: float
    sigma: float

    @property
    def t_comp(self) -> float:
        return self.mu + 2.0 * self.sigma


@dataclass(frozen=True)
class CandidatePoint:
    point: PixelPoint
    source: Literal["contour", "peak"]


@dataclass(frozen=True)
class IdmConfig:
    t_bin: int = 20
    frac_split: float = 0.5
    alpha: float = 1.0
    peak_radius: int = 3
    dedup_radius: int = 3
    mode: Literal["contour", "hybrid"] = "contour"

    def __post_init__(self):
        if not 0 <= self.t_bin <= 255:
            raise ValueError(f"t_bin {self.t_bin} outside [0, 255]")
        if not 0.0 < self.frac_split < 1.0:
            raise ValueError("frac_split must lie in (0, 1)")
        if self.peak_radius < 1 or self.dedup_radius < 0:
            raise ValueError("peak_radius >= 1 and dedup_radius >= 0 required")
        if self.mode not in ("contour", "hybrid"):
            raise ValueError(f"unknown IDM mode {self.mode!r}")


def binarize(gray: np.ndarray, t: int) -> np.ndarray:
    if not 0 <= t <= 255:
        raise ValueError(f"threshold {t} outside [0, 255]")
    return (np.asarray(gray) >= t).astype(np.uint8)


def erode3x3(b: np.ndarray) -> np.ndarray:
    """3x3 minimum filter; pixels beyond the border count as background."""
    p = np.pad(np.asarray(b, dtype=np.uint8), 1, constant_values=0)
    h, w = p.shape[0] - 2, p.shape[1] - 2
    out = np.ones((h, w), dtype=np.uint8)
    for dy in range(3):
        for dx in range(3):
            out &= p[dy:dy + h, dx:dx + w]
    return out


def extract_contours(b: np.ndarray) -> list[Contour]:
    """One Contour per 8-connected foreground component, ordered by first raster pixel."""
    labels, n = ndimage.label(np.asarray(b) != 0, structure=_EIGHT)
    if n == 0:
        return []
    out = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        local = labels[sl] == k
        c = Contour.from_mask(local)
        shift = np.array([sl[1].start, sl[0].start], dtype=np.int64)
        out.append(Contour(c.members + shift, c.boundary + shift))
    out.sort(key=lambda c: (int(c.members[0, 1]), int(c.members[0, 0])))
    return out


def contour_stats(contours: Sequence[Contour]) -> ContourStats:
    if not contours:
        raise ValueError("contour_stats needs at least one contour")
    mu, sigma = population_mean_std([c.area for c in contours])
    return ContourStats(mu, sigma)


def composite_probability(area: float, stats: ContourStats) -> float:
    """Tail mass of the area Gaussian beyond the composite threshold.

    Diagnostic only: the split decision itself is the hard test ``area > t_comp``.
    ``area`` is accepted for call-site symmetry but the value depends solely on
    the fitted distribution.
    """
    if stats.sigma <= 0:
        raise ValueError("degenerate area distribution (sigma == 0)")
    return 1.0 - normal_cdf((stats.t_comp - stats.mu) / stats.sigma)


def distance_transform(b: np.ndarray, region: Contour) -> np.ndarray:
    """Euclidean distance from each region pixel to the nearest region boundary pixel."""
    if region.area == 0:
        raise ValueError("empty region")
    shape = np.asarray(b).shape
    out = np.zeros(shape, dtype=np.float64)
    x0, y0, x1, y1 = region.bbox()
    # every boundary pixel lies inside the bbox, so the nearest one does too
    seeds = np.ones((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
    seeds[region.boundary[:, 1] - y0, region.boundary[:, 0] - x0] = False
    local = ndimage.distance_transform_edt(seeds)
    mx, my = region.members[:, 0], region.members[:, 1]
    out[my, mx] = local[my - y0, mx - x0]
    return out


def split_composite(region: Contour, b: np.ndarray, frac: float) -> list[Contour]:
    dt = distance_transform(b, region)
    mx, my = region.members[:, 0], region.members[:, 1]
    vals = dt[my, mx]
    keep = vals >= frac * vals.max()
    core = np.zeros(dt.shape, dtype=np.uint8)
    core[my[keep], mx[keep]] = 1
    children = extract_contours(core)
    if len(children) <= 1:
        return [region]
    return children


def centroid(region: Contour, intensity: np.ndarray) -> PixelPoint:
    """Intensity-weighted moment centroid, rounded and clamped into the region bbox."""
    mx, my = region.members[:, 0], region.members[:, 1]
    w = np.asarray(intensity, dtype=np.float64)[my, mx]
    m00 = w.sum()
    m10 = (w * mx).sum()
    m01 = (w * my).sum()
    # the guard only matters for all-zero intensity; adding it unconditionally
    # would push exact half-pixel centroids below the rounding tie
    denom = max(m00, CENTROID_EPS)
    cx = int(round_half_away(m10 / denom))
    cy = int(round_half_away(m01 / denom))
    x0, y0, x1, y1 = region.bbox()
    return PixelPoint(min(max(cx, x0), x1), min(max(cy, y0), y1))


def detect_peaks(gray: np.ndarray, alpha: float, radius: int) -> list[CandidatePoint]:
    if radius < 1:
        raise ValueError("radius must be >= 1")
    g = np.asarray(gray, dtype=np.float64)
    mu, sigma = population_mean_std(g.ravel())
    t_peak = mu + alpha * sigma
    size = 2 * radius + 1
    footprint = np.ones((size, size), dtype=bool)
    footprint[radius, radius] = False
    neigh = ndimage.maximum_filter(g, footprint=footprint, mode="constant", cval=-np.inf)
    ys, xs = np.nonzero((g > t_peak) & (g > neigh))
    return [CandidatePoint(PixelPoint(int(x), int(y)), "peak") for y, x in zip(ys, xs)]


@dataclass(frozen=True)
class _Region:
    parent: Contour
    children: list[Contour]
    points: list[PixelPoint]


def contour_path(gray: np.ndarray, cfg: IdmConfig) -> list[_Region]:
    eroded = erode3x3(binarize(gray, cfg.t_bin))
    contours = extract_contours(eroded)
    if not contours:
        return []
    t_comp = contour_stats(contours).t_comp
    regions = []
    for c in contours:
        children = split_composite(c, eroded, cfg.frac_split) if c.area > t_comp else [c]
        regions.append(_Region(c, children, [centroid(ch, gray) for ch in children]))
    return regions


def run_idm(dm: np.ndarray, cfg: IdmConfig = IdmConfig()) -> list[CandidatePoint]:
    """Candidate points for one density map.

    In hybrid mode peaks are reconciled with each eroded region: when a region
    holds more peaks than the contour route produced points for it, the peaks
    replace those points (an unbroken blob over several maxima); otherwise the
    region's peaks are redundant and dropped.  Peaks outside every region are
    kept unless within ``dedup_radius`` (Chebyshev) of a contour point.
    """
    gray = normalize_to_gray(dm)
    regions = contour_path(gray, cfg)
    if cfg.mode == "contour":
        return [CandidatePoint(p, "contour") for r in regions for p in r.points]

    peaks = detect_peaks(gray, cfg.alpha, cfg.peak_radius)
    owner = np.full(gray.shape, -1, dtype=np.int64)
    for i, r in enumerate(regions):
        owner[r.parent.members[:, 1], r.parent.members[:, 0]] = i
    inside: dict[int, list[CandidatePoint]] = {}
    loose = []
    for pk in peaks:
        i = int(owner[pk.point.y, pk.point.x])
        if i < 0:
            loose.append(pk)
        else:
            inside.setdefault(i, []).append(pk)

    out: list[CandidatePoint] = []
    kept_contour: list[PixelPoint] = []
    for i, r in enumerate(regions):
        own = inside.get(i, [])
        if len(own) > len(r.points):
            out.extend(own)
        else:
            out.extend(CandidatePoint(p, "contour") for p in r.points)
            kept_contour.extend(r.points)
    anchors = np.array(kept_contour, dtype=np.int64).reshape(-1, 2)
    for pk in loose:
        if anchors.size:
            cheb = np.max(np.abs(anchors - np.array(pk.point)), axis=1)
            if cheb.min() <= cfg.dedup_radius:
                continue
        out.append(pk)
    return out
