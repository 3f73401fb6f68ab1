"""Synthetic dense scenes with exact ground truth, and oracle perception providers.

A scene holds non-overlapping (or capped-overlap) instances of a few shapes,
a per-pixel feature grid, grounded detections with jitter/drops/spurious
boxes, distractor hotspots that fool the similarity map, and clutter sites
that fool both the detector and the density generator.

The oracle density generator is exemplar conditioned: an instance's blob mass
falls off with its log-scale distance to the nearest exemplar and carries
seeded noise whose magnitude shrinks as ``sigma_noise / n_exemplars``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Literal, Sequence

import numpy as np

from .core import BBox, Detection, InstanceMask, PixelPoint, mask_bbox
from .pipeline import Providers
from .ppsm import PointPrompt

__all__ = [
    "SceneSpec",
    "Instance",
    "Scene",
    "PlacementError",
    "generate_scene",
    "scene_from_centers",
    "render_gaussians",
    "render_density",
    "scale_response",
    "oracle_providers",
    "suite_specs",
    "SUITE_CANVAS",
]


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    width: int = 128
    height: int = 128
    n_instances: int = 40
    radius_range: tuple[float, float] = (3.0, 10.0)
    shape: Literal["disk", "ellipse", "rect"] = "disk"
    max_overlap: float = 0.0
    n_distractor_hotspots: int = 0
    background_mask_prob: float = 0.5
    detector_fn_rate: float = 0.0
    detector_fp_rate: float = 0.0
    min_false_positives: int = 0
    box_jitter: int = 1
    feature_classes: int = 3
    seed: int = 0
    # density generator behaviour
    dm_sigma: float = 2.0
    sigma_noise: float = 0.15
    scale_tolerance: float = 0.5
    scale_falloff: float = 0.2

    def __post_init__(self):
        lo, hi = self.radius_range
        if self.n_instances < 1:
            raise ValueError("n_instances must be >= 1")
        if not 0 < lo <= hi:
            raise ValueError("radius_range must satisfy 0 < min <= max")
        if self.shape not in ("disk", "ellipse", "rect"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if not 0.0 <= self.max_overlap < 1.0:
            raise ValueError("max_overlap must lie in [0, 1)")
        for name in ("background_mask_prob", "detector_fn_rate", "detector_fp_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.width < 8 or self.height < 8:
            raise ValueError("canvas too small")
        if self.feature_classes < 1 or self.box_jitter < 0 or self.n_distractor_hotspots < 0:
            raise ValueError("feature_classes >= 1, box_jitter >= 0, n_distractor_hotspots >= 0")
        if self.min_false_positives < 0:
            raise ValueError("min_false_positives must be >= 0")
        if self.dm_sigma <= 0:
            raise ValueError("dm_sigma must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["radius_range"] = list(self.radius_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        d = dict(d)
        if "radius_range" in d:
            d["radius_range"] = tuple(float(v) for v in d["radius_range"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Instance:
    center: PixelPoint
    gt_mask: InstanceMask
    scale: float
    feature_class: int
    box: BBox
    quality: float
    confidence: float


@dataclass(frozen=True, eq=False)
class Scene:
    spec: SceneSpec
    instances: list[Instance]
    feature_grid: np.ndarray
    similarity: np.ndarray
    detections: list[Detection]
    distractors: list[PixelPoint] = field(default_factory=list)
    clutter: list[PixelPoint] = field(default_factory=list)
    noise: np.ndarray | None = None

    @property
    def gt_count(self) -> int:
        return len(self.instances)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.spec.height, self.spec.width)

    def gt_masks(self) -> list[InstanceMask]:
        return [i.gt_mask for i in self.instances]

    def instance_at(self, p: PixelPoint) -> int:
        """Index of the instance containing ``p`` (nearest centre wins), or -1."""
        hits = [k for k, inst in enumerate(self.instances) if inst.gt_mask.mask[p.y, p.x]]
        if not hits:
            return -1
        return min(hits, key=lambda k: (self.instances[k].center.x - p.x) ** 2
                   + (self.instances[k].center.y - p.y) ** 2)


def _shape_mask(shape, cx, cy, r, aspect, vertical, kind):
    h, w = shape
    yy, xx = np.ogrid[:h, :w]
    rx, ry = (r * aspect, r) if vertical else (r, r * aspect)
    dx, dy = xx - cx, yy - cy
    if kind == "rect":
        return (np.abs(dx) <= rx) & (np.abs(dy) <= ry)
    return (dx / rx) ** 2 + (dy / ry) ** 2 <= 1.0


def _normalized_radius(shape, cx, cy, r, aspect, vertical, kind):
    h, w = shape
    yy, xx = np.ogrid[:h, :w]
    rx, ry = (r * aspect, r) if vertical else (r, r * aspect)
    dx, dy = (xx - cx) / rx, (yy - cy) / ry
    if kind == "rect":
        return np.maximum(np.abs(dx), np.abs(dy))
    return np.sqrt(dx ** 2 + dy ** 2)


def _build_scene(spec: SceneSpec, placed: list[tuple], rng: np.random.Generator) -> tuple[Scene, np.ndarray]:
    """Derive masks, features, similarity and detections from placed shapes."""
    h, w = spec.height, spec.width
    lo, hi = spec.radius_range
    span = max(hi - lo, 1e-9)
    d = spec.feature_classes + 2
    feat = rng.normal(0.0, 0.05, size=(d, h, w))
    sim = rng.uniform(0.0, 0.3, size=(h, w))
    instances = []
    for cx, cy, r, aspect, vertical, cls in placed:
        m = _shape_mask((h, w), cx, cy, r, aspect, vertical, spec.shape)
        if not m.any():
            m[cy, cx] = True
        box = mask_bbox(m)
        t = min(max((r - lo) / span, 0.0), 1.0)
        quality = 0.85 + 0.15 * (0.6 * t + 0.4 * rng.uniform())
        conf = 0.5 + 0.4 * t + 0.1 * rng.uniform()
        base = rng.uniform(0.95, 1.0)
        rho = np.clip(_normalized_radius((h, w), cx, cy, r, aspect, vertical, spec.shape), 0, 1)
        sim[m] = base - 0.25 * rho[m] ** 2
        vec = np.zeros(d)
        vec[cls] = 1.0
        vec[-2] = t
        vec[-1] = 1.0
        feat[:, m] = vec[:, None] + rng.normal(0.0, 0.05, size=(d, int(m.sum())))
        instances.append(Instance(
            center=PixelPoint(int(cx), int(cy)),
            gt_mask=InstanceMask(m.astype(np.uint8), 1.0),
            scale=math.sqrt(box.area),
            feature_class=int(cls),
            box=box,
            quality=float(quality),
            confidence=float(conf),
        ))
    occ = np.zeros((h, w), dtype=bool)
    for inst in instances:
        occ |= inst.gt_mask.mask.astype(bool)
    detections = []
    j = spec.box_jitter
    for inst in instances:
        if rng.uniform() < spec.detector_fn_rate:
            continue
        b = inst.box
        jit = rng.integers(-j, j + 1, size=4) if j else np.zeros(4, dtype=int)
        x0 = int(np.clip(b.x0 + jit[0], 0, inst.center.x))
        y0 = int(np.clip(b.y0 + jit[1], 0, inst.center.y))
        x1 = int(np.clip(b.x1 + jit[2], inst.center.x, w - 1))
        y1 = int(np.clip(b.y1 + jit[3], inst.center.y, h - 1))
        detections.append(Detection(BBox(x0, y0, x1, y1), inst.confidence))
    noise = rng.normal(0.0, 1.0, size=len(instances))
    return Scene(spec, instances, feat, sim, detections, [], [], noise), occ


def _disk(shape, x: int, y: int, radius: float) -> np.ndarray:
    h, w = shape
    yy, xx = np.ogrid[:h, :w]
    return (xx - x) ** 2 + (yy - y) ** 2 <= radius ** 2


def _grow(mask: np.ndarray, r: int) -> np.ndarray:
    p = np.pad(mask, r, constant_values=False)
    out = np.zeros_like(p)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            out |= np.roll(np.roll(p, dy, axis=0), dx, axis=1)
    return out[r:-r, r:-r] if r else out


def _add_background_sites(spec: SceneSpec, scene: Scene, occ: np.ndarray,
                          rng: np.random.Generator) -> Scene:
    """Place clutter sites (spurious detections) and distractor hotspots.

    Sites keep ``5.5 * dm_sigma`` from every other blob centre so their
    density blobs stay separate contours; distractors additionally keep
    3 px outside every detection box.
    """
    shape = scene.shape
    h, w = shape
    sep = 5.5 * spec.dm_sigma
    blocked = occ.copy()
    for inst in scene.instances:
        blocked |= _disk(shape, inst.center.x, inst.center.y, sep)
    sizes = sorted(i.box.width for i in scene.instances)
    half = max(1, sizes[len(sizes) // 2] // 2)
    margin = 2

    def draw_site():
        free = np.argwhere(~blocked[margin:h - margin, margin:w - margin])
        if free.size == 0:
            raise PlacementError("no free background left for a clutter/distractor site")
        y, x = free[int(rng.integers(len(free)))] + margin
        return int(x), int(y)

    # false positives come from background area, one chance per object-sized cell
    cell = float(np.median([i.box.area for i in scene.instances]))
    n_cells = int((h * w - occ.sum()) // max(cell, 1.0))
    n_fp = int(rng.binomial(n_cells, spec.detector_fp_rate)) if spec.detector_fp_rate else 0
    n_fp = max(n_fp, spec.min_false_positives)
    clutter, detections = [], list(scene.detections)
    sim = scene.similarity.copy()
    for _ in range(n_fp):
        x, y = draw_site()
        box = BBox(max(0, x - half), max(0, y - half), min(w - 1, x + half), min(h - 1, y + half))
        detections.append(Detection(box, float(rng.uniform(0.15, 0.45))))
        sim[_disk(shape, x, y, half) & ~occ] = rng.uniform(0.6, 0.9)
        blocked |= _disk(shape, x, y, sep)
        clutter.append(PixelPoint(x, y))

    boxes = np.zeros(shape, dtype=bool)
    for det in detections:
        boxes[det.box.slices()] = True
    # a distractor's blob centroid may drift a pixel or two; keep it clear of every box
    blocked |= _grow(boxes, 3)
    yy, xx = np.ogrid[:h, :w]
    distractors = []
    for _ in range(spec.n_distractor_hotspots):
        x, y = draw_site()
        d2 = (xx - x) ** 2 + (yy - y) ** 2
        sim = np.where(d2 <= 9, 1.0 - 0.02 * d2, sim)
        blocked |= d2 <= sep ** 2
        distractors.append(PixelPoint(x, y))
    return Scene(spec, scene.instances, scene.feature_grid, sim, detections,
                 distractors, clutter, scene.noise)


def generate_scene(spec: SceneSpec, max_attempts: int = 100_000) -> Scene:
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    lo, hi = spec.radius_range
    occ = np.zeros((h, w), dtype=bool)
    placed: list[tuple] = []
    masks: list[np.ndarray] = []
    attempts = 0
    while len(placed) < spec.n_instances:
        attempts += 1
        if attempts > max_attempts:
            raise PlacementError(
                f"placed {len(placed)}/{spec.n_instances} instances in {max_attempts} attempts")
        r = float(rng.uniform(lo, hi))
        aspect = 1.0 if spec.shape == "disk" else float(rng.uniform(0.6, 1.0))
        vertical = bool(rng.integers(2))
        pad = int(math.ceil(r))
        if w - 2 * pad <= 0 or h - 2 * pad <= 0:
            continue
        cx = int(rng.integers(pad, w - pad))
        cy = int(rng.integers(pad, h - pad))
        m = _shape_mask((h, w), cx, cy, r, aspect, vertical, spec.shape)
        if spec.max_overlap == 0.0:
            if (m & occ).any():
                continue
        elif (m & occ).any():
            area = m.sum()
            ok = all((m & o).sum() / (area + o.sum() - (m & o).sum()) <= spec.max_overlap
                     for o in masks if (m & o).any())
            if not ok:
                continue
        cls = int(rng.integers(spec.feature_classes))
        placed.append((cx, cy, r, aspect, vertical, cls))
        masks.append(m)
        occ |= m
    scene, occ = _build_scene(spec, placed, rng)
    return _add_background_sites(spec, scene, occ, rng)


def scene_from_centers(spec: SceneSpec, centers: Sequence[tuple[int, int]], radius: float) -> Scene:
    """Scene with disks of one radius at fixed centres (fixtures); no background sites."""
    rng = np.random.default_rng(spec.seed)
    placed = [(int(x), int(y), float(radius), 1.0, False, k % spec.feature_classes)
              for k, (x, y) in enumerate(centers)]
    scene, _ = _build_scene(spec, placed, rng)
    return scene


def render_gaussians(shape, points, masses, sigma: float, trunc: float = 4.0) -> np.ndarray:
    """Sum of isotropic Gaussians truncated at ``trunc * sigma``.

    Each kernel is renormalised over its in-canvas support, so a blob of mass
    ``m`` contributes exactly ``m`` to the grid integral even near the border.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h, w = shape
    out = np.zeros((h, w), dtype=np.float64)
    rad = int(math.ceil(trunc * sigma))
    for (x, y), m in zip(points, masses):
        if m <= 0:
            continue
        y0, y1, x0, x1 = max(0, y - rad), min(h, y + rad + 1), max(0, x - rad), min(w, x + rad + 1)
        yy, xx = np.ogrid[y0:y1, x0:x1]
        d2 = (xx - x) ** 2 + (yy - y) ** 2
        k = np.exp(-d2 / (2.0 * sigma ** 2))
        k[d2 > (trunc * sigma) ** 2] = 0.0
        out[y0:y1, x0:x1] += m * k / k.sum()
    return out


def render_density(scene: Scene, sigma_blob: float) -> np.ndarray:
    """Ground-truth density map: one unit-mass Gaussian per instance centre."""
    pts = [i.center for i in scene.instances]
    return render_gaussians(scene.shape, pts, [1.0] * len(pts), sigma_blob)


def scale_response(scale: float, exemplar_scales: Sequence[float], tolerance: float, falloff: float) -> float:
    """Relative blob mass for an instance given the exemplar scales.

    1 within ``tolerance`` of the nearest exemplar in log-scale, Gaussian
    decay with width ``falloff`` beyond it.
    """
    gap = min(abs(math.log(scale / s)) for s in exemplar_scales)
    excess = max(0.0, gap - tolerance)
    return math.exp(-(excess / falloff) ** 2)


def _site_rng(seed: int, p: PixelPoint) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, 0xB10B, p.x, p.y])


def _pull_inside(v: int, size: int, r: float) -> float:
    target = min(max(v, r), size - 1 - r) if size - 1 >= 2 * r else (size - 1) / 2
    step = r / math.sqrt(2.0)
    return min(max(target, v - step), v + step)


def oracle_providers(scene: Scene, spec: SceneSpec | None = None) -> Providers:
    spec = spec or scene.spec
    shape = scene.shape
    h, w = shape
    r_blob = 2.5 * spec.radius_range[1]
    yy, xx = np.ogrid[:h, :w]
    label_map = np.full(shape, -1, dtype=np.int64)
    for k in range(scene.gt_count - 1, -1, -1):
        label_map[scene.instances[k].gt_mask.mask.astype(bool)] = k
    overlapped = spec.max_overlap > 0

    def similarity(image_id):
        return scene.similarity

    def features(image_id):
        return scene.feature_grid

    def detector(image_id, label):
        return [Detection(d.box, d.confidence, label) for d in scene.detections]

    def density(image_id, exemplars: Sequence[BBox]):
        if not exemplars:
            raise ValueError("density generator needs at least one exemplar")
        ex_scales = [math.sqrt(b.area) for b in exemplars]
        e = len(exemplars)
        masses, pts = [], []
        for inst, xi in zip(scene.instances, scene.noise):
            a = scale_response(inst.scale, ex_scales, spec.scale_tolerance, spec.scale_falloff)
            masses.append(a * max(0.0, 1.0 + (spec.sigma_noise / e) * xi))
            pts.append(inst.center)
        pts += scene.distractors + scene.clutter
        masses += [0.8] * len(scene.distractors) + [0.9] * len(scene.clutter)
        return render_gaussians(shape, pts, masses, spec.dm_sigma)

    def decoder(image_id, prompt: PointPrompt | PixelPoint):
        p = prompt.point if isinstance(prompt, PointPrompt) else prompt
        k = scene.instance_at(p) if overlapped else int(label_map[p.y, p.x])
        if k >= 0:
            inst = scene.instances[k]
            return InstanceMask(inst.gt_mask.mask, inst.quality)
        rng = _site_rng(spec.seed, p)
        if rng.uniform() < spec.background_mask_prob:
            # pull the blob centre inwards so a border prompt still yields a large
            # mask, by at most r/sqrt(2) per axis so the prompt stays covered
            cx, cy = _pull_inside(p.x, w, r_blob), _pull_inside(p.y, h, r_blob)
            blob = (xx - cx) ** 2 + (yy - cy) ** 2 <= r_blob ** 2
            return InstanceMask(blob.astype(np.uint8), float(rng.uniform(0.6, 0.9)))
        patch = (xx - p.x) ** 2 + (yy - p.y) ** 2 <= 4
        return InstanceMask(patch.astype(np.uint8), float(rng.uniform(0.3, 0.6)))

    return Providers(similarity=similarity, density=density, detector=detector,
                     decoder=decoder, features=features)


SUITE_CANVAS = {10: 96, 40: 144, 80: 192}


def suite_specs(n_scenes: int = 50, base_seed: int = 1000, counts: Sequence[int] = (10, 40, 80),
                **overrides) -> list[SceneSpec]:
    """Seeded benchmark suite cycling through low/medium/high instance counts.

    Canvas sides follow :data:`SUITE_CANVAS` (roughly constant coverage);
    other counts fall back to a side of ``~21.5 * sqrt(n)``.
    """
    defaults = dict(n_distractor_hotspots=5, detector_fp_rate=0.01, background_mask_prob=0.8)
    defaults.update(overrides)
    specs = []
    for s in range(n_scenes):
        n = counts[s % len(counts)]
        side = SUITE_CANVAS.get(n, int(round(21.5 * math.sqrt(n))))
        specs.append(SceneSpec(width=side, height=side, n_instances=n, seed=base_seed + s, **defaults))
    return specs
