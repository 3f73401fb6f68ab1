import math

import numpy as np
import pytest

from persense.core import BBox, PixelPoint, iou, normalize_to_gray
from persense.idm import IdmConfig, binarize, detect_peaks, erode3x3, extract_contours
from persense.ppsm import PointPrompt
from persense.synth import (
    PlacementError,
    SceneSpec,
    generate_scene,
    oracle_providers,
    render_density,
    render_gaussians,
    scale_response,
    scene_from_centers,
    suite_specs,
)


def test_generation_is_deterministic():
    spec = SceneSpec(width=96, height=96, n_instances=20, seed=4, n_distractor_hotspots=3,
                     detector_fp_rate=0.02)
    a, b = generate_scene(spec), generate_scene(spec)
    assert [i.center for i in a.instances] == [i.center for i in b.instances]
    assert (a.similarity == b.similarity).all() and (a.feature_grid == b.feature_grid).all()
    assert a.detections == b.detections and a.distractors == b.distractors


@pytest.mark.parametrize("shape", ["disk", "ellipse", "rect"])
def test_count_and_no_overlap(shape):
    s = generate_scene(SceneSpec(width=144, height=144, n_instances=40, shape=shape, seed=2))
    assert s.gt_count == 40
    ms = s.gt_masks()
    for i in range(len(ms)):
        for j in range(i + 1, len(ms)):
            assert iou(ms[i].mask, ms[j].mask) == 0.0


def test_overlap_cap_respected():
    spec = SceneSpec(width=64, height=64, n_instances=25, max_overlap=0.2, seed=9)
    ms = generate_scene(spec).gt_masks()
    for i in range(len(ms)):
        for j in range(i + 1, len(ms)):
            assert iou(ms[i].mask, ms[j].mask) <= 0.2 + 1e-12


def test_placement_budget_error():
    with pytest.raises(PlacementError):
        generate_scene(SceneSpec(width=16, height=16, n_instances=50, radius_range=(5, 6)), 2000)


def test_spec_validation_and_dict_round_trip():
    s = SceneSpec(n_instances=12, radius_range=(2, 4), seed=3)
    assert SceneSpec.from_dict(s.to_dict()) == s
    with pytest.raises(ValueError):
        SceneSpec.from_dict({"n_instance": 3})
    for bad in (dict(n_instances=0), dict(radius_range=(5, 2)), dict(detector_fp_rate=1.5),
                dict(max_overlap=1.0), dict(shape="star")):
        with pytest.raises(ValueError):
            SceneSpec(**bad)


def test_density_integral_and_peak():
    s = generate_scene(SceneSpec(width=96, height=96, n_instances=10, seed=1))
    dm = render_density(s, 2.0)
    assert dm.min() >= 0
    assert 9.9 <= dm.sum() <= 10.1
    one = generate_scene(SceneSpec(width=40, height=40, n_instances=1, seed=5))
    d1 = render_density(one, 2.0)
    c = one.instances[0].center
    assert np.unravel_index(d1.argmax(), d1.shape) == (c.y, c.x)


def test_two_instances_three_sigma_apart_merge_but_keep_two_maxima():
    sigma = 2.0
    dm = render_gaussians((32, 40), [(16, 16), (16 + int(3 * sigma), 16)], [1, 1], sigma)
    gray = normalize_to_gray(dm)
    assert len(extract_contours(erode3x3(binarize(gray, 20)))) == 1
    assert len(detect_peaks(gray, IdmConfig().alpha, IdmConfig().peak_radius)) == 2


def test_gt_pixels_covered_by_detections_without_noise():
    s = generate_scene(SceneSpec(width=96, height=96, n_instances=20, box_jitter=0, seed=8))
    covered = np.zeros(s.shape, bool)
    for d in s.detections:
        covered[d.box.slices()] = True
    for m in s.gt_masks():
        assert covered[m.mask.astype(bool)].all()


def test_similarity_ranges_and_distractors_outside_boxes():
    s = generate_scene(SceneSpec(width=128, height=128, n_instances=20, seed=3,
                                 n_distractor_hotspots=5))
    inst = np.zeros(s.shape, bool)
    for m in s.gt_masks():
        inst |= m.mask.astype(bool)
    assert s.similarity[inst].min() >= 0.7 and s.similarity[inst].max() <= 1.0
    assert len(s.distractors) == 5
    for p in s.distractors:
        assert s.similarity[p.y, p.x] == 1.0
        assert not any(d.box.contains(p) for d in s.detections)


def test_decoder_behaviour():
    spec = SceneSpec(width=96, height=96, n_instances=10, seed=6, background_mask_prob=1.0)
    s = generate_scene(spec)
    prov = oracle_providers(s)
    inst = s.instances[3]
    m = prov.decoder("x", PointPrompt(inst.center, 1.0))
    assert m.same_pixels(inst.gt_mask) and 0.85 <= m.quality <= 1.0
    bg = np.argwhere(s.similarity < 0.3)[0]
    blob = prov.decoder("x", PointPrompt(PixelPoint(int(bg[1]), int(bg[0])), 0.1))
    assert blob.area > max(i.gt_mask.area for i in s.instances)
    assert 0.6 <= blob.quality <= 0.9
    again = prov.decoder("x", PointPrompt(PixelPoint(int(bg[1]), int(bg[0])), 0.1))
    assert again.same_pixels(blob) and again.quality == blob.quality


def test_scale_response_shape():
    assert scale_response(10, [10], 0.5, 0.2) == 1.0
    assert scale_response(10 * math.exp(0.5), [10], 0.5, 0.2) == 1.0
    assert scale_response(10 * math.exp(0.7), [10], 0.5, 0.2) == pytest.approx(math.exp(-1))
    assert scale_response(20, [5, 19], 0.5, 0.2) == 1.0


def test_density_mae_falls_with_diverse_exemplars():
    errs1, errs3 = [], []
    for spec in suite_specs(30, n_distractor_hotspots=0, detector_fp_rate=0.0):
        s = generate_scene(spec)
        prov = oracle_providers(s)
        by_scale = sorted(s.instances, key=lambda i: i.scale)
        top = max(s.instances, key=lambda i: i.confidence)
        picks = [by_scale[int(q * (len(by_scale) - 1))] for q in (1 / 6, 1 / 2, 5 / 6)]
        errs1.append(abs(prov.density("x", [top.box]).sum() - s.gt_count))
        errs3.append(abs(prov.density("x", [p.box for p in picks]).sum() - s.gt_count))
    assert np.mean(errs3) < np.mean(errs1)


def test_scene_from_centers_fixture():
    s = scene_from_centers(SceneSpec(width=40, height=40, n_instances=2), [(10, 10), (30, 25)], 4)
    assert [i.center for i in s.instances] == [PixelPoint(10, 10), PixelPoint(30, 25)]
    assert s.distractors == [] and len(s.detections) == 2


def test_suite_cycles_counts():
    specs = suite_specs(6)
    assert [s.n_instances for s in specs] == [10, 40, 80] * 2
    assert len({s.seed for s in specs}) == 6
