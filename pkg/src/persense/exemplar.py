"""Feedback exemplar selection.

``top_m_by_score`` ranks first-pass masks by decoder quality alone.
``select_diverse`` adds feature diversity (k-means on normalised pooled
features), a quality gate applied after clustering, a weighted semantic and
geometric score, and one winner per small/medium/large scale bin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .core import BBox, InstanceMask, percentile

__all__ = [
    "ExemplarCandidate",
    "WeightConfig",
    "DiverseConfig",
    "candidate_from_mask",
    "top_m_by_score",
    "region_pool",
    "feature_stats",
    "normalize_features",
    "kmeans",
    "kmeans_objective",
    "filter_by_quality",
    "cosine",
    "weighted_score",
    "scale_bins",
    "select_diverse",
]

ScaleBin = Literal["small", "medium", "large"]


@dataclass(frozen=True, eq=False)
class ExemplarCandidate:
    box: BBox
    mask: InstanceMask | None
    quality: float
    feature: np.ndarray
    area: float
    aspect: float

    def with_feature(self, feature: np.ndarray) -> "ExemplarCandidate":
        return replace(self, feature=np.asarray(feature, dtype=np.float64))


@dataclass(frozen=True)
class WeightConfig:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    w4: float = 1.0

    def __post_init__(self):
        ws = (self.w1, self.w2, self.w3, self.w4)
        if min(ws) < 0 or max(ws) <= 0:
            raise ValueError("weights must be >= 0 with at least one positive")


@dataclass(frozen=True)
class DiverseConfig:
    t_sam: float = 0.8
    k_clusters: int = 3
    weights: WeightConfig = field(default_factory=WeightConfig)
    bounds: tuple[float, float] = (33.0, 66.0)
    seed: int = 0
    max_iter: int = 100


def candidate_from_mask(mask: InstanceMask, feature_grid: np.ndarray) -> ExemplarCandidate | None:
    """Exemplar candidate for a decoded mask; None for an empty mask.

    Area and aspect are those of the mask's tight box, the quantities the
    scale bins and geometric terms operate on.
    """
    box = mask.bbox()
    if box is None:
        return None
    return ExemplarCandidate(
        box=box,
        mask=mask,
        quality=mask.quality,
        feature=region_pool(feature_grid, box),
        area=float(box.area),
        aspect=box.aspect,
    )


def _rank_key(c: ExemplarCandidate):
    return (-c.quality, -c.area, c.box.y0, c.box.x0)


def top_m_by_score(candidates: Sequence[ExemplarCandidate], m: int = 4) -> list[ExemplarCandidate]:
    if m < 1:
        raise ValueError("m must be >= 1")
    return sorted(candidates, key=_rank_key)[:m]


def region_pool(feature_grid: np.ndarray, box: BBox) -> np.ndarray:
    """Per-channel mean of a ``(d, H, W)`` feature grid over the box pixels."""
    fg = np.asarray(feature_grid, dtype=np.float64)
    if fg.ndim == 2:
        fg = fg[None]
    _, h, w = fg.shape
    if not box.within(w, h):
        raise ValueError(f"box {box} outside {w}x{h} feature grid")
    ys, xs = box.slices()
    return fg[:, ys, xs].mean(axis=(1, 2))


def feature_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(features, dtype=np.float64)
    if f.shape[0] == 0:
        raise ValueError("no features")
    mu = f.mean(axis=0)
    return mu, np.sqrt(((f - mu) ** 2).mean(axis=0))


def _standardize(f: np.ndarray, mu: np.ndarray, sd: np.ndarray) -> np.ndarray:
    safe = np.where(sd > 0, sd, 1.0)
    return np.where(sd > 0, (f - mu) / safe, 0.0)


def normalize_features(candidates: Sequence[ExemplarCandidate]) -> list[ExemplarCandidate]:
    if not candidates:
        raise ValueError("normalize_features needs at least one candidate")
    f = np.stack([c.feature for c in candidates])
    mu, sd = feature_stats(f)
    z = _standardize(f, mu, sd)
    return [c.with_feature(row) for c, row in zip(candidates, z)]


def kmeans_objective(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    return float(((x - centroids[labels]) ** 2).sum())


def _plusplus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans(
    features: Sequence[Sequence[float]] | np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    history: list | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's k-means with k-means++ seeding.

    Returns ``(labels, centroids)``.  An emptied cluster is re-seeded at the
    point farthest from its current centroid.  ``history``, when given,
    receives the objective after every centroid update.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"{n} points cannot form {k} clusters")
    rng = np.random.default_rng(seed)
    cent = _plusplus_init(x, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - cent[None]) ** 2).sum(axis=2)
        new = d2.argmin(axis=1)
        for j in range(k):
            if not np.any(new == j):
                # steal the farthest point from a cluster that can spare one
                sizes = np.bincount(new, minlength=k)
                dist = d2[np.arange(n), new]
                dist[sizes[new] < 2] = -1.0
                far = int(dist.argmax())
                new[far] = j
                d2[far] = 0.0
        if np.array_equal(new, labels):
            break
        labels = new
        cent = np.array([x[labels == j].mean(axis=0) for j in range(k)])
        if history is not None:
            history.append(kmeans_objective(x, labels, cent))
    return labels, cent


def filter_by_quality(candidates: Sequence[ExemplarCandidate], t_sam: float = 0.8) -> list[ExemplarCandidate]:
    if not 0.0 <= t_sam <= 1.0:
        raise ValueError("t_sam must lie in [0, 1]")
    return [c for c in candidates if c.quality >= t_sam]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def weighted_score(
    c: ExemplarCandidate,
    centroid: np.ndarray,
    ref: np.ndarray,
    mean_area: float,
    mean_aspect: float,
    w: WeightConfig = WeightConfig(),
) -> float:
    # log(1 + dA): plain log(dA) is undefined for a candidate at the mean area
    return (
        w.w1 * cosine(c.feature, centroid)
        + w.w2 * cosine(c.feature, ref)
        - w.w3 * math.log1p(abs(c.area - mean_area))
        - w.w4 * abs(c.aspect - mean_aspect)
    )


def scale_bins(areas: Sequence[float], bounds: tuple[float, float] = (33.0, 66.0)) -> list[ScaleBin]:
    if len(areas) == 0:
        raise ValueError("scale_bins needs at least one area")
    p_lo, p_hi = percentile(areas, bounds[0]), percentile(areas, bounds[1])
    out: list[ScaleBin] = []
    for a in areas:
        out.append("small" if a <= p_lo else "medium" if a <= p_hi else "large")
    return out


def select_diverse(
    candidates: Sequence[ExemplarCandidate],
    ref: ExemplarCandidate,
    cfg: DiverseConfig = DiverseConfig(),
) -> list[ExemplarCandidate]:
    """Up to three exemplars, one per scale bin of the quality-filtered set.

    Features are standardised over the full candidate population (the
    reference is mapped with the same statistics), clustered before the
    quality gate so centroids see every candidate, then the filtered
    candidates are scored against their own unfiltered-cluster centroid.
    Returned candidates carry their original (unnormalised) features.
    """
    if not candidates:
        raise ValueError("select_diverse needs at least one candidate")
    cands = list(candidates)
    f = np.stack([c.feature for c in cands])
    mu, sd = feature_stats(f)
    z = _standardize(f, mu, sd)
    z_ref = _standardize(np.asarray(ref.feature, dtype=np.float64), mu, sd)
    k = min(cfg.k_clusters, len(cands))
    labels, cents = kmeans(z, k, seed=cfg.seed, max_iter=cfg.max_iter)

    keep = [i for i, c in enumerate(cands) if c.quality >= cfg.t_sam]
    if not keep:
        return top_m_by_score(cands, 3)
    mean_area = float(np.mean([cands[i].area for i in keep]))
    mean_aspect = float(np.mean([cands[i].aspect for i in keep]))
    bins = scale_bins([cands[i].area for i in keep], cfg.bounds)

    best: dict[str, tuple[tuple, int]] = {}
    for i, b in zip(keep, bins):
        c = cands[i].with_feature(z[i])
        phi = weighted_score(c, cents[labels[i]], z_ref, mean_area, mean_aspect, cfg.weights)
        key = (phi, cands[i].quality, cands[i].area)
        if b not in best or key > best[b][0]:
            best[b] = (key, i)
    order = [b for b in ("small", "medium", "large") if b in best]
    return [cands[best[b][1]] for b in order]
