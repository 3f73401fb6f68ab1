"""Point prompt selection: density-adaptive similarity threshold plus box gating."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Detection, PixelPoint
from .idm import CandidatePoint

__all__ = ["PointPrompt", "adaptive_threshold", "box_gate", "select_prompts", "DEFAULT_K"]

DEFAULT_K = math.sqrt(2.0)


@dataclass(frozen=True)
class PointPrompt:
    point: PixelPoint
    similarity: float
    gated: bool = True
    source: str = "contour"


def adaptive_threshold(s_max: float, count: int, k: float = DEFAULT_K) -> float:
    """``s_max / (count / k)``.  A single object is handled by the argmax rule instead."""
    if count <= 1:
        raise ValueError("adaptive threshold is defined for count > 1 only")
    if k <= 0:
        raise ValueError("k must be positive")
    return s_max / (count / k)


def box_gate(p: PixelPoint, detections: Sequence[Detection]) -> bool:
    return any(d.box.contains(p) for d in detections)


def select_prompts(
    candidates: Sequence[CandidatePoint],
    sim: np.ndarray,
    detections: Sequence[Detection],
    k: float = DEFAULT_K,
    count: int | None = None,
) -> list[PointPrompt]:
    """Keep candidates whose similarity clears the adaptive threshold and that fall in a box.

    ``count`` overrides the object count (default: number of candidates).  When
    the count is at most one, the highest-similarity candidate is emitted
    without gating; ``gated`` then records whether it happened to fall in a box.
    """
    if not candidates:
        return []
    sim = np.asarray(sim, dtype=np.float64)
    scores = [float(sim[c.point.y, c.point.x]) for c in candidates]
    c_count = len(candidates) if count is None else int(count)
    if c_count <= 1:
        best = int(np.argmax(scores))
        c = candidates[best]
        return [PointPrompt(c.point, scores[best], box_gate(c.point, detections), c.source)]
    t = adaptive_threshold(max(scores), c_count, k)
    out = []
    for c, s in zip(candidates, scores):
        if s >= t and box_gate(c.point, detections):
            out.append(PointPrompt(c.point, s, True, c.source))
    return out
