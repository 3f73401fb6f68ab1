"""Two-pass one-shot segmentation over pluggable perception providers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Sequence

import numpy as np

from .core import BBox, Detection, InstanceMask, PixelPoint
from .exemplar import (
    DiverseConfig,
    ExemplarCandidate,
    WeightConfig,
    candidate_from_mask,
    region_pool,
    select_diverse,
    top_m_by_score,
)
from .idm import IdmConfig, run_idm
from .imrm import filter_masks
from .ppsm import DEFAULT_K, PointPrompt, select_prompts

__all__ = [
    "Providers",
    "PipelineConfig",
    "SegmentationResult",
    "NoGroundingError",
    "initial_exemplar",
    "run",
]


class NoGroundingError(RuntimeError):
    """The detector returned no box for the target label."""

    code = "no-grounding"


@dataclass(frozen=True)
class Providers:
    similarity: Callable[[str], np.ndarray]
    density: Callable[[str, Sequence[BBox]], np.ndarray]
    detector: Callable[[str, str], list[Detection]]
    decoder: Callable[[str, PointPrompt], InstanceMask]
    features: Callable[[str], np.ndarray]


@dataclass(frozen=True)
class PipelineConfig:
    """Pipeline settings.

    ``diversity``, ``hybrid`` and ``imrm`` default to what ``variant`` implies
    and can be set individually for component ablations.
    """

    idm: IdmConfig = field(default_factory=IdmConfig)
    k_ppsm: float = DEFAULT_K
    m: int = 4
    t_sam: float = 0.8
    weights: WeightConfig = field(default_factory=WeightConfig)
    k_clusters: int = 3
    iou_min: float = 0.8
    variant: Literal["persense", "persense_pp"] = "persense_pp"
    feedback_iters: int = 1
    label: str = "object"
    count_source: Literal["candidates", "dm"] = "candidates"
    diversity: bool | None = None
    hybrid: bool | None = None
    imrm: bool | None = None
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("persense", "persense_pp"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.feedback_iters < 1:
            raise ValueError("feedback_iters must be >= 1")
        if self.m < 1 or self.k_clusters < 1:
            raise ValueError("m and k_clusters must be >= 1")
        if self.count_source not in ("candidates", "dm"):
            raise ValueError(f"unknown count_source {self.count_source!r}")

    def _flag(self, value: bool | None) -> bool:
        return self.variant == "persense_pp" if value is None else value

    @property
    def use_diversity(self) -> bool:
        return self._flag(self.diversity)

    @property
    def use_hybrid(self) -> bool:
        return self._flag(self.hybrid)

    @property
    def use_imrm(self) -> bool:
        return self._flag(self.imrm)

    def idm_config(self) -> IdmConfig:
        return replace(self.idm, mode="hybrid" if self.use_hybrid else "contour")

    def diverse_config(self) -> DiverseConfig:
        return DiverseConfig(t_sam=self.t_sam, k_clusters=self.k_clusters,
                             weights=self.weights, seed=self.seed)


@dataclass(frozen=True, eq=False)
class SegmentationResult:
    prompts_pass1: list[PointPrompt]
    prompts_final: list[PointPrompt]
    exemplars_pass1: list[BBox]
    exemplars_final: list[BBox]
    masks: list[InstanceMask]
    masks_pre_imrm: list[InstanceMask]
    dm_pass1: np.ndarray
    dm_final: np.ndarray
    decoder_calls_final: int = 0

    @property
    def predicted_count(self) -> int:
        return len(self.masks)


def initial_exemplar(
    providers: Providers, label: str, image_id: str = ""
) -> tuple[BBox, ExemplarCandidate, list[Detection]]:
    """Positive location prior -> decoded mask -> exemplar box and reference candidate."""
    detections = providers.detector(image_id, label)
    if not detections:
        raise NoGroundingError(f"no detections for label {label!r}")
    # max() keeps the first of equal-confidence boxes
    b_max = max(detections, key=lambda d: d.confidence).box
    sim = np.asarray(providers.similarity(image_id))
    window = sim[b_max.slices()]
    iy, ix = np.unravel_index(int(np.argmax(window)), window.shape)
    p_max = PixelPoint(b_max.x0 + int(ix), b_max.y0 + int(iy))
    prompt = PointPrompt(p_max, float(window[iy, ix]), True, "prior")
    mask = providers.decoder(image_id, prompt)
    box = mask.bbox() or b_max
    feats = providers.features(image_id)
    ref = ExemplarCandidate(box=box, mask=mask, quality=mask.quality,
                            feature=region_pool(feats, box), area=float(box.area),
                            aspect=box.aspect)
    return box, ref, detections


def _prompt_pass(providers, image_id, exemplars, sim, detections, cfg: PipelineConfig):
    dm = np.asarray(providers.density(image_id, exemplars), dtype=np.float64)
    candidates = run_idm(dm, cfg.idm_config())
    count = None
    if cfg.count_source == "dm":
        count = int(math.floor(dm.sum() + 0.5))
    prompts = select_prompts(candidates, sim, detections, cfg.k_ppsm, count)
    # prompts are mutually independent decoder requests
    masks = [providers.decoder(image_id, p) for p in prompts]
    return dm, prompts, masks


def _feedback(masks, feats, ref, cfg: PipelineConfig) -> list[BBox]:
    cands = [c for c in (candidate_from_mask(m, feats) for m in masks) if c is not None]
    if not cands:
        return [ref.box]
    if cfg.use_diversity:
        chosen = select_diverse(cands, ref, cfg.diverse_config())
    else:
        chosen = top_m_by_score(cands, cfg.m)
    return [c.box for c in chosen]


def run(providers: Providers, cfg: PipelineConfig = PipelineConfig(), image_id: str = "") -> SegmentationResult:
    box0, ref, detections = initial_exemplar(providers, cfg.label, image_id)
    sim = np.asarray(providers.similarity(image_id))
    feats = providers.features(image_id)

    dm1, prompts1, masks1 = _prompt_pass(providers, image_id, [box0], sim, detections, cfg)
    dm, prompts, masks = dm1, prompts1, masks1
    exemplars = [box0]
    for _ in range(cfg.feedback_iters):
        exemplars = _feedback(masks, feats, ref, cfg)
        dm, prompts, masks = _prompt_pass(providers, image_id, exemplars, sim, detections, cfg)

    final = filter_masks(masks, detections, cfg.iou_min) if cfg.use_imrm else list(masks)
    return SegmentationResult(
        prompts_pass1=prompts1,
        prompts_final=prompts,
        exemplars_pass1=[box0],
        exemplars_final=exemplars,
        masks=final,
        masks_pre_imrm=list(masks),
        dm_pass1=dm1,
        dm_final=dm,
        decoder_calls_final=len(masks),
    )
