"""Evaluation: class mIoU, counting errors, density bins, scale CV, prompt quality."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .core import InstanceMask, iou, normal_cdf, population_mean_std
from .ppsm import PointPrompt

__all__ = [
    "EvalReport",
    "union_mask",
    "class_iou",
    "class_miou",
    "count_errors",
    "density_bin",
    "prompt_pr",
    "cv_scale",
    "exceedance_probability",
    "evaluate_masks",
    "evaluate_image",
    "aggregate",
    "DENSITY_BINS",
]

DensityBin = Literal["Low", "Medium", "High"]
DENSITY_BINS: tuple[DensityBin, ...] = ("Low", "Medium", "High")


@dataclass
class EvalReport:
    image_id: str
    variant: str
    miou: float
    mae: float
    rmse: float
    prompt_precision: float
    prompt_recall: float
    bin: str
    cv_scale: float
    per_bin_miou: dict[str, float] = field(default_factory=dict)


def union_mask(masks: Sequence[InstanceMask], shape: tuple[int, int] | None = None) -> np.ndarray:
    if not masks:
        if shape is None:
            raise ValueError("shape required for an empty mask list")
        return np.zeros(shape, dtype=bool)
    out = np.zeros(masks[0].shape, dtype=bool)
    for m in masks:
        if m.shape != out.shape:
            raise ValueError(f"mask shape {m.shape} != {out.shape}")
        out |= m.mask.astype(bool)
    if shape is not None and out.shape != tuple(shape):
        raise ValueError(f"mask shape {out.shape} != {shape}")
    return out


def class_iou(pred_masks: Sequence[InstanceMask], gt_masks: Sequence[InstanceMask],
              shape: tuple[int, int] | None = None) -> float:
    """IoU of the union of predictions against the union of ground truth for one image."""
    if shape is None:
        ref = list(gt_masks) or list(pred_masks)
        if not ref:
            return 1.0
        shape = ref[0].shape
    return iou(union_mask(pred_masks, shape), union_mask(gt_masks, shape))


def class_miou(images: Sequence[tuple[Sequence[InstanceMask], Sequence[InstanceMask]]]) -> float:
    """Mean over images of :func:`class_iou`; each item is ``(pred_masks, gt_masks)``."""
    if not images:
        raise ValueError("no images")
    return float(np.mean([class_iou(p, g) for p, g in images]))


def count_errors(pred: Sequence[int], gt: Sequence[int]) -> tuple[float, float]:
    if len(pred) != len(gt):
        raise ValueError(f"length mismatch {len(pred)} vs {len(gt)}")
    if not pred:
        raise ValueError("no counts")
    d = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(np.mean(np.abs(d))), float(math.sqrt(np.mean(d ** 2)))


def density_bin(count: int) -> DensityBin:
    if count < 0:
        raise ValueError("negative count")
    if count <= 30:
        return "Low"
    if count <= 60:
        return "Medium"
    return "High"


def prompt_pr(prompts: Sequence[PointPrompt], scene) -> tuple[float, float]:
    """Greedy point-in-mask matching in prompt order.

    ``scene`` is a synthetic scene or a plain sequence of ground-truth masks.
    A prompt is a true positive when it lands in a ground-truth instance that
    no earlier prompt has claimed.
    """
    gt = scene.gt_masks() if hasattr(scene, "gt_masks") else list(scene)
    if not prompts:
        return 1.0, 0.0
    claimed: set[int] = set()
    tp = 0
    for p in prompts:
        pt = p.point if hasattr(p, "point") else p
        for k, m in enumerate(gt):
            if k not in claimed and m.mask[pt.y, pt.x]:
                claimed.add(k)
                tp += 1
                break
    n = len(gt)
    return tp / len(prompts), (tp / n if n else 0.0)


def cv_scale(areas: Sequence[float]) -> float:
    mu, sigma = population_mean_std(areas)
    if mu == 0:
        raise ValueError("coefficient of variation undefined for zero mean")
    return sigma / mu


def exceedance_probability(mu: float, sigma: float, t: float) -> float:
    """P(S >= t) for S ~ N(mu, sigma^2)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return 1.0 - normal_cdf((t - mu) / sigma)


def evaluate_masks(image_id: str, variant: str, pred_masks: Sequence[InstanceMask],
                   prompts: Sequence[PointPrompt], gt_masks: Sequence[InstanceMask],
                   shape: tuple[int, int]) -> EvalReport:
    """Per-image report from predicted masks and prompts against ground-truth masks."""
    miou = class_iou(pred_masks, gt_masks, shape)
    err = float(abs(len(pred_masks) - len(gt_masks)))
    prec, rec = prompt_pr(prompts, gt_masks)
    h, w = shape
    cv = cv_scale([m.area / (h * w) for m in gt_masks]) if gt_masks else 0.0
    return EvalReport(image_id, variant, miou, err, err, prec, rec, density_bin(len(gt_masks)), cv)


def evaluate_image(image_id: str, variant: str, result, scene) -> EvalReport:
    """Per-image report for a pipeline result against its synthetic scene."""
    return evaluate_masks(image_id, variant, result.masks, result.prompts_final,
                          scene.gt_masks(), scene.shape)


def aggregate(reports: Sequence[EvalReport], pred_counts: Sequence[int] | None = None,
              gt_counts: Sequence[int] | None = None, image_id: str = "aggregate") -> EvalReport:
    """Dataset-level report: means of per-image rates, MAE/RMSE over counts.

    Without explicit counts the per-image absolute errors stand in, which is
    exact for MAE and RMSE alike.
    """
    if not reports:
        raise ValueError("no reports")
    if pred_counts is not None and gt_counts is not None:
        mae, rmse = count_errors(pred_counts, gt_counts)
    else:
        e = np.array([r.mae for r in reports])
        mae, rmse = float(e.mean()), float(math.sqrt(np.mean(e ** 2)))
    per_bin = {}
    for b in DENSITY_BINS:
        vals = [r.miou for r in reports if r.bin == b]
        if vals:
            per_bin[b] = float(np.mean(vals))
    variants = sorted({r.variant for r in reports})
    return EvalReport(
        image_id=image_id,
        variant=variants[0] if len(variants) == 1 else "+".join(variants),
        miou=float(np.mean([r.miou for r in reports])),
        mae=mae,
        rmse=rmse,
        prompt_precision=float(np.mean([r.prompt_precision for r in reports])),
        prompt_recall=float(np.mean([r.prompt_recall for r in reports])),
        bin="all",
        cv_scale=float(np.mean([r.cv_scale for r in reports])),
        per_bin_miou=per_bin,
    )
