import numpy as np
import pytest

from persense.core import BBox, Detection, InstanceMask, PixelPoint
from persense.metrics import class_iou
from persense.pipeline import NoGroundingError, PipelineConfig, Providers, initial_exemplar, run
from persense.synth import SceneSpec, generate_scene, oracle_providers


def stub_providers(sim, detections, decoder=None, density=None):
    h, w = sim.shape
    calls = []

    def dec(image_id, prompt):
        calls.append(prompt.point)
        if decoder:
            return decoder(prompt)
        m = np.zeros((h, w), np.uint8)
        m[prompt.point.y, prompt.point.x] = 1
        return InstanceMask(m, 0.9)

    prov = Providers(
        similarity=lambda i: sim,
        density=density or (lambda i, ex: np.zeros((h, w))),
        detector=lambda i, label: list(detections),
        decoder=dec,
        features=lambda i: np.ones((2, h, w)),
    )
    return prov, calls


def test_argmax_searched_only_in_top_box():
    sim = np.zeros((20, 20))
    sim[15, 15] = 1.0
    sim[3, 4] = 0.5
    dets = [Detection(BBox(10, 10, 19, 19), 0.7, "o"), Detection(BBox(0, 0, 8, 8), 0.9, "o")]
    prov, calls = stub_providers(sim, dets)
    box, ref, got = initial_exemplar(prov, "o")
    assert calls == [PixelPoint(4, 3)]
    assert box == BBox(4, 3, 4, 3) and ref.box == box and got == dets


def test_constant_similarity_picks_first_row_major_pixel():
    prov, calls = stub_providers(np.full((10, 10), 0.4), [Detection(BBox(2, 3, 6, 8), 0.9, "o")])
    initial_exemplar(prov, "o")
    assert calls == [PixelPoint(2, 3)]


def test_no_grounding():
    prov, _ = stub_providers(np.zeros((5, 5)), [])
    with pytest.raises(NoGroundingError) as e:
        run(prov)
    assert e.value.code == "no-grounding"


def test_empty_density_gives_empty_result():
    prov, _ = stub_providers(np.zeros((8, 8)), [Detection(BBox(0, 0, 7, 7), 0.9, "o")])
    res = run(prov)
    assert res.masks == [] and res.prompts_final == [] and res.predicted_count == 0
    # no pass-1 masks: the initial exemplar is reused
    assert res.exemplars_final == res.exemplars_pass1


def test_config_validation_and_flags():
    with pytest.raises(ValueError):
        PipelineConfig(variant="other")
    with pytest.raises(ValueError):
        PipelineConfig(feedback_iters=0)
    pp = PipelineConfig()
    assert pp.use_diversity and pp.use_hybrid and pp.use_imrm
    ps = PipelineConfig(variant="persense")
    assert not (ps.use_diversity or ps.use_hybrid or ps.use_imrm)
    assert PipelineConfig(variant="persense", imrm=True).use_imrm
    assert PipelineConfig().idm_config().mode == "hybrid"


@pytest.fixture(scope="module")
def scene40():
    spec = SceneSpec(width=144, height=144, n_instances=40, seed=21, n_distractor_hotspots=5,
                     detector_fp_rate=0.01, background_mask_prob=0.8)
    return generate_scene(spec)


def test_initial_exemplar_near_top_confidence_instance(scene40):
    box, _, _ = initial_exemplar(oracle_providers(scene40), "object")
    top = max(scene40.instances, key=lambda i: i.confidence)
    assert max(abs(box.x0 - top.box.x0), abs(box.y0 - top.box.y0),
               abs(box.x1 - top.box.x1), abs(box.y1 - top.box.y1)) <= 2


def test_persense_pp_end_to_end(scene40):
    res = run(oracle_providers(scene40), PipelineConfig())
    assert abs(res.predicted_count - 40) <= 2
    assert class_iou(res.masks, scene40.gt_masks(), scene40.shape) >= 0.9
    assert len(res.exemplars_final) == 3
    ids = {id(m) for m in res.masks_pre_imrm}
    assert all(id(m) in ids for m in res.masks)
    assert res.decoder_calls_final == len(res.prompts_final)
    assert all(p.gated for p in res.prompts_final)


def test_persense_uses_four_exemplars(scene40):
    res = run(oracle_providers(scene40), PipelineConfig(variant="persense"))
    assert len(res.exemplars_final) == 4
    assert res.masks == res.masks_pre_imrm


def test_decoder_calls_match_prompts(scene40):
    prov = oracle_providers(scene40)
    n = []

    def counting(image_id, p):
        n.append(p)
        return prov.decoder(image_id, p)

    wrapped = Providers(prov.similarity, prov.density, prov.detector, counting, prov.features)
    res = run(wrapped, PipelineConfig())
    # one call for the prior, one per pass-1 prompt, one per final prompt
    assert len(n) == 1 + len(res.prompts_pass1) + len(res.prompts_final)


def test_deterministic_and_iteration_plateau(scene40):
    prov = oracle_providers(scene40)
    a, b = run(prov, PipelineConfig()), run(prov, PipelineConfig())
    assert [p.point for p in a.prompts_final] == [p.point for p in b.prompts_final]
    assert all(x.same_pixels(y) for x, y in zip(a.masks, b.masks))
    assert a.dm_final.tobytes() == b.dm_final.tobytes()
    c = run(prov, PipelineConfig(feedback_iters=2))
    assert len(c.masks) == len(a.masks)
    assert all(x.same_pixels(y) for x, y in zip(a.masks, c.masks))


def test_dm_count_source(scene40):
    res = run(oracle_providers(scene40), PipelineConfig(count_source="dm"))
    assert res.predicted_count > 0
