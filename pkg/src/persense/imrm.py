"""Irrelevant mask rejection by area outlier analysis with detection rescue."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Detection, InstanceMask, box_iou, percentile, population_mean_std

__all__ = ["AreaStats", "two_means_1d", "area_stats", "rescue_by_detection", "filter_masks"]


@dataclass(frozen=True)
class AreaStats:
    q1: float
    q3: float
    mu_maj: float
    sigma_maj: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    @property
    def t_iqr(self) -> float:
        return self.q3 + 2.0 * self.iqr

    @property
    def t_final(self) -> float:
        return (self.mu_maj + 2.0 * self.sigma_maj) + self.t_iqr


def two_means_1d(values: Sequence[float], max_iter: int = 100) -> np.ndarray:
    """Lloyd's 2-means on scalars seeded at (min, max).  Returns 0/1 labels.

    Ties in distance go to the low cluster.  A constant sample yields all zeros.
    """
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros(v.size, dtype=np.int64)
    labels = (np.abs(v - hi) < np.abs(v - lo)).astype(np.int64)
    for _ in range(max_iter):
        # seeding at the extremes keeps both clusters nonempty
        lo, hi = float(v[labels == 0].mean()), float(v[labels == 1].mean())
        new = (np.abs(v - hi) < np.abs(v - lo)).astype(np.int64)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels


def area_stats(areas: Sequence[float]) -> AreaStats:
    a = np.asarray(areas, dtype=np.float64)
    if a.size < 2:
        raise ValueError("area statistics need at least two masks")
    q1, q3 = percentile(a, 25), percentile(a, 75)
    labels = two_means_1d(a)
    groups = [a[labels == 0], a[labels == 1]]
    groups = [g for g in groups if g.size]
    # larger cluster wins; on equal size the smaller mean (objects < background blobs)
    maj = min(groups, key=lambda g: (-g.size, g.mean()))
    mu, sigma = population_mean_std(maj)
    return AreaStats(q1, q3, mu, sigma)


def rescue_by_detection(mask: InstanceMask, detections: Sequence[Detection], iou_min: float = 0.8) -> bool:
    if not 0.0 < iou_min <= 1.0:
        raise ValueError("iou_min must lie in (0, 1]")
    box = mask.bbox()
    if box is None:
        return False
    return any(box_iou(box, d.box) >= iou_min for d in detections)


def filter_masks(
    masks: Sequence[InstanceMask], detections: Sequence[Detection], iou_min: float = 0.8
) -> list[InstanceMask]:
    masks = list(masks)
    if len(masks) < 2:
        return masks
    t = area_stats([m.area for m in masks]).t_final
    return [m for m in masks if m.area <= t or rescue_by_detection(m, detections, iou_min)]
