"""Command-line entry point: ``persense {synth,run,eval,ablate,inspect}``.

Exit codes: 0 success, 2 usage or input error, 1 internal error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import re
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .core import BBox, PixelPoint, normalize_to_gray
from .exemplar import WeightConfig
from .idm import IdmConfig, binarize, contour_path, erode3x3, extract_contours
from .metrics import aggregate, evaluate_masks
from .persist import (
    atomic_write_text,
    export_pgm,
    read_grid,
    read_masks,
    write_grid,
    write_masks,
    write_report,
)
from .pipeline import NoGroundingError, PipelineConfig, run as run_pipeline
from .ppsm import PointPrompt
from .synth import SUITE_CANVAS, PlacementError, SceneSpec, generate_scene, oracle_providers

__all__ = ["main", "UsageError", "parse_number", "parse_config", "build_config", "sub_seed"]

STAGES = ("gray", "binary", "eroded", "contours", "dm", "prompts", "masks")
ABLATE_PARAMS = ("k_ppsm", "m", "alpha", "weights", "t_bin")


class UsageError(Exception):
    """Bad flags or bad input files; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- value parsing

_SQRT = re.compile(r"^(?:sqrt\((.+)\)|√(.+))$")


def parse_number(text: str) -> float:
    """Float with optional ``sqrt(x)`` / ``√x`` forms."""
    t = text.strip()
    m = _SQRT.match(t)
    try:
        if m:
            return math.sqrt(float(m.group(1) or m.group(2)))
        return float(t)
    except ValueError:
        raise UsageError(f"not a number: {text!r}") from None


def _parse_bool(text: str) -> bool | None:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    if t in ("", "none", "auto"):
        return None
    raise UsageError(f"not a boolean: {text!r}")


def _parse_weights(text: str) -> WeightConfig:
    parts = text.split(":")
    if len(parts) != 4:
        raise UsageError(f"weights need four ':'-separated values, got {text!r}")
    try:
        return WeightConfig(*(parse_number(p) for p in parts))
    except ValueError as e:
        raise UsageError(str(e)) from None


def _parse_int(text: str) -> int:
    v = parse_number(text)
    if v != int(v):
        raise UsageError(f"not an integer: {text!r}")
    return int(v)


_IDM_KEYS = {"t_bin": _parse_int, "frac_split": parse_number, "alpha": parse_number,
             "peak_radius": _parse_int, "dedup_radius": _parse_int}
_PIPE_KEYS = {
    "k_ppsm": parse_number, "m": _parse_int, "t_sam": parse_number, "weights": _parse_weights,
    "k_clusters": _parse_int, "iou_min": parse_number, "variant": str.strip,
    "feedback_iters": _parse_int, "label": str.strip, "count_source": str.strip,
    "diversity": _parse_bool, "hybrid": _parse_bool, "imrm": _parse_bool, "seed": _parse_int,
}
CONFIG_KEYS = tuple(_PIPE_KEYS) + tuple(_IDM_KEYS)


def parse_config(text: str) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in CONFIG_KEYS:
            raise UsageError(f"config line {n}: unknown key {k!r}")
        out[k] = v
    return out


def build_config(values: dict[str, str]) -> PipelineConfig:
    for k in values:
        if k not in CONFIG_KEYS:
            raise UsageError(f"unknown config key {k!r}")
    idm = {k: _IDM_KEYS[k](v) for k, v in values.items() if k in _IDM_KEYS}
    pipe = {k: _PIPE_KEYS[k](v) for k, v in values.items() if k in _PIPE_KEYS}
    try:
        return PipelineConfig(idm=IdmConfig(**idm), **pipe)
    except (ValueError, TypeError) as e:
        raise UsageError(f"invalid config: {e}") from None


def config_snapshot(cfg: PipelineConfig) -> dict:
    d = asdict(cfg)
    d["idm"].pop("mode")
    return d


def sub_seed(seed: int, image_id: str) -> int:
    h = hashlib.blake2b(f"{seed}:{image_id}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") >> 1


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _load_json(path: Path):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"missing file {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: {e}") from None


# ---------------------------------------------------------------- synth

def _scene_specs(raw: dict, count: int, seed: int) -> list[tuple[str, SceneSpec]]:
    if not isinstance(raw, dict):
        raise UsageError("spec must be a JSON object")
    raw = dict(raw)
    raw.pop("seed", None)
    counts = raw.pop("n_instances", SceneSpec.n_instances)
    counts = counts if isinstance(counts, list) else [counts]
    auto_canvas = "width" not in raw and "height" not in raw and len(counts) > 1
    out = []
    for i in range(count):
        image_id = f"img_{i:04d}"
        d = dict(raw, n_instances=counts[i % len(counts)], seed=sub_seed(seed, image_id))
        if auto_canvas:
            n = d["n_instances"]
            d["width"] = d["height"] = SUITE_CANVAS.get(n, int(round(21.5 * math.sqrt(n))))
        try:
            out.append((image_id, SceneSpec.from_dict(d)))
        except (ValueError, TypeError) as e:
            raise UsageError(f"invalid spec: {e}") from None
    return out


def _box_json(b: BBox) -> list[int]:
    return b.as_list()


def _write_scene(dirpath: Path, image_id: str, spec: SceneSpec) -> None:
    scene = generate_scene(spec)
    dirpath.mkdir(parents=True)
    meta = {
        "image_id": image_id,
        "spec": spec.to_dict(),
        "gt_count": scene.gt_count,
        "instances": [
            {"center": list(i.center), "box": _box_json(i.box), "scale": i.scale,
             "feature_class": i.feature_class, "quality": i.quality}
            for i in scene.instances
        ],
        "distractors": [list(p) for p in scene.distractors],
        "clutter": [list(p) for p in scene.clutter],
    }
    atomic_write_text(dirpath / "scene.json", _dumps(meta))
    atomic_write_text(dirpath / "detections.json", _dumps(
        [{"box": _box_json(d.box), "confidence": d.confidence, "label": d.label}
         for d in scene.detections]))
    write_grid(dirpath / "similarity.psg", scene.similarity.astype(np.float32))
    write_masks(dirpath / "gt_masks.jsonl", scene.gt_masks())


def cmd_synth(a) -> int:
    if a.count < 1:
        raise UsageError("--count must be >= 1")
    specs = _scene_specs(_load_json(Path(a.spec)), a.count, a.seed)
    out = Path(a.out)
    if out.exists() and any(out.iterdir()):
        raise UsageError(f"output directory {out} is not empty")
    out.parent.mkdir(parents=True, exist_ok=True)
    # build in a sibling temp dir so a failure leaves no partial output
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        atomic_write_text(tmp / "manifest.json", _dumps({
            "command": "synth", "tool_version": __version__, "seed": a.seed, "count": a.count,
            "spec": _load_json(Path(a.spec)), "images": [i for i, _ in specs]}))
        for image_id, spec in specs:
            try:
                _write_scene(tmp / image_id, image_id, spec)
            except PlacementError as e:
                raise UsageError(f"{image_id}: {e}") from None
        if out.exists():
            out.rmdir()
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    print(f"wrote {len(specs)} scenes to {out}")
    return 0


# ---------------------------------------------------------------- run

def _image_ids(data: Path) -> list[str]:
    if not data.is_dir():
        raise UsageError(f"missing data directory {data}")
    ids = sorted(p.name for p in data.iterdir() if (p / "scene.json").is_file())
    if not ids:
        raise UsageError(f"no scenes under {data}")
    return ids


def _prompt_json(p: PointPrompt) -> dict:
    return {"x": p.point.x, "y": p.point.y, "similarity": float(p.similarity),
            "gated": bool(p.gated), "source": p.source}


def _prompt_from_json(d: dict) -> PointPrompt:
    return PointPrompt(PixelPoint(int(d["x"]), int(d["y"])), float(d["similarity"]),
                       bool(d["gated"]), d["source"])


def _run_one(args) -> str:
    data, out, image_id, cfg = args
    meta = _load_json(data / image_id / "scene.json")
    spec = SceneSpec.from_dict(meta["spec"])
    scene = generate_scene(spec)
    providers = oracle_providers(scene, spec)
    d = out / image_id
    d.mkdir(parents=True, exist_ok=True)
    try:
        res = run_pipeline(providers, cfg, image_id)
    except NoGroundingError as e:
        atomic_write_text(d / "result.json", _dumps(
            {"image_id": image_id, "variant": cfg.variant, "error": e.code,
             "predicted_count": 0, "prompts_final": [], "prompts_pass1": [],
             "exemplars_pass1": [], "exemplars_final": [], "pre_imrm_count": 0,
             "shape": list(scene.shape)}))
        write_masks(d / "masks.jsonl", [])
        return image_id
    write_grid(d / "dm_pass1.psg", res.dm_pass1.astype(np.float32))
    write_grid(d / "dm_final.psg", res.dm_final.astype(np.float32))
    write_masks(d / "masks.jsonl", res.masks)
    write_masks(d / "masks_pre_imrm.jsonl", res.masks_pre_imrm)
    atomic_write_text(d / "result.json", _dumps({
        "image_id": image_id,
        "variant": cfg.variant,
        "error": None,
        "predicted_count": res.predicted_count,
        "pre_imrm_count": len(res.masks_pre_imrm),
        "decoder_calls_final": res.decoder_calls_final,
        "prompts_pass1": [_prompt_json(p) for p in res.prompts_pass1],
        "prompts_final": [_prompt_json(p) for p in res.prompts_final],
        "exemplars_pass1": [_box_json(b) for b in res.exemplars_pass1],
        "exemplars_final": [_box_json(b) for b in res.exemplars_final],
        "shape": list(scene.shape),
    }))
    return image_id


def _jobs(a) -> int:
    if a.jobs is not None:
        j = a.jobs
    else:
        env = os.environ.get("PERSENSE_JOBS", "1")
        try:
            j = int(env)
        except ValueError:
            raise UsageError(f"PERSENSE_JOBS must be an integer, got {env!r}") from None
    if j < 1:
        raise UsageError("--jobs must be >= 1")
    return j


def _collect_config(a, extra: dict[str, str] | None = None) -> PipelineConfig:
    values: dict[str, str] = {}
    if getattr(a, "config", None):
        try:
            values.update(parse_config(Path(a.config).read_text()))
        except FileNotFoundError:
            raise UsageError(f"missing config file {a.config}") from None
    for item in getattr(a, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    if getattr(a, "variant", None):
        values["variant"] = a.variant
    if getattr(a, "seed", None) is not None:
        values["seed"] = str(a.seed)
    values.update(extra or {})
    return build_config(values)


def execute_run(data: Path, out: Path, cfg: PipelineConfig, jobs: int = 1) -> list[str]:
    ids = _image_ids(data)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "manifest.json", _dumps({
        "command": "run", "tool_version": __version__, "variant": cfg.variant,
        "seed": cfg.seed, "config": config_snapshot(cfg), "data": str(data),
        "out": str(out), "images": ids}))
    work = [(data, out, i, cfg) for i in ids]
    if jobs == 1:
        for w in work:
            _run_one(w)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            list(ex.map(_run_one, work))
    return ids


def cmd_run(a) -> int:
    cfg = _collect_config(a)
    ids = execute_run(Path(a.data), Path(a.out), cfg, _jobs(a))
    print(f"ran {cfg.variant} on {len(ids)} images -> {a.out}")
    return 0


# ---------------------------------------------------------------- eval

def _eval_one(args):
    pred, gt, image_id = args
    res = _load_json(pred / image_id / "result.json")
    meta = _load_json(gt / image_id / "scene.json")
    shape = (meta["spec"]["height"], meta["spec"]["width"])
    gt_masks = read_masks(gt / image_id / "gt_masks.jsonl")
    pred_masks = read_masks(pred / image_id / "masks.jsonl")
    prompts = [_prompt_from_json(p) for p in res["prompts_final"]]
    return evaluate_masks(image_id, res["variant"], pred_masks, prompts, gt_masks, shape)


def execute_eval(pred: Path, gt: Path, out: Path, jobs: int = 1):
    pred_ids = set(_image_ids_results(pred))
    gt_ids = set(_image_ids(gt))
    if pred_ids != gt_ids:
        missing_pred = sorted(gt_ids - pred_ids)
        missing_gt = sorted(pred_ids - gt_ids)
        msg = []
        if missing_pred:
            msg.append("missing predictions: " + ", ".join(missing_pred))
        if missing_gt:
            msg.append("missing ground truth: " + ", ".join(missing_gt))
        raise UsageError("image id mismatch; " + "; ".join(msg))
    work = [(pred, gt, i) for i in sorted(gt_ids)]
    if jobs == 1:
        reports = [_eval_one(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            reports = list(ex.map(_eval_one, work))
    write_report(reports, out, bins=True)
    return reports


def _image_ids_results(pred: Path) -> list[str]:
    if not pred.is_dir():
        raise UsageError(f"missing prediction directory {pred}")
    return sorted(p.name for p in pred.iterdir() if (p / "result.json").is_file())


def cmd_eval(a) -> int:
    reports = execute_eval(Path(a.pred), Path(a.gt), Path(a.out), _jobs(a))
    agg = aggregate(reports)
    print(f"{len(reports)} images: miou={agg.miou!r} mae={agg.mae!r} rmse={agg.rmse!r}")
    return 0


# ---------------------------------------------------------------- ablate

def parse_values(param: str, text: str) -> list[str]:
    """Comma-separated values; integer parameters also accept ``a..b`` ranges."""
    items = [v.strip() for v in text.split(",") if v.strip()]
    out = []
    for v in items:
        r = re.fullmatch(r"(-?\d+)\.\.(-?\d+)", v)
        if r and param in ("m", "t_bin"):
            lo, hi = int(r.group(1)), int(r.group(2))
            out.extend(str(i) for i in range(lo, hi + 1))
        else:
            out.append(v)
    if not out:
        raise UsageError("--values is empty")
    conv = _parse_weights if param == "weights" else _IDM_KEYS.get(param) or _PIPE_KEYS[param]
    for v in out:
        conv(v)
    return out


ABLATION_HEADER = ("param", "value", "miou", "mae", "rmse", "precision", "recall")


def cmd_ablate(a) -> int:
    if a.param not in ABLATE_PARAMS:
        raise UsageError(f"unknown param {a.param!r}; choose from {', '.join(ABLATE_PARAMS)}")
    values = parse_values(a.param, a.values)
    out = Path(a.out)
    data = Path(a.data)
    _image_ids(data)
    jobs = _jobs(a)
    lines = [",".join(ABLATION_HEADER)]
    for v in values:
        cfg = _collect_config(a, {a.param: v})
        tag = re.sub(r"[^A-Za-z0-9_.-]", "_", f"{a.param}={v}")
        run_dir = out / "runs" / tag
        execute_run(data, run_dir, cfg, jobs)
        reports = execute_eval(run_dir, data, out / "reports" / f"{tag}.csv", jobs)
        agg = aggregate(reports)
        lines.append(",".join([a.param, v, repr(agg.miou), repr(agg.mae), repr(agg.rmse),
                               repr(agg.prompt_precision), repr(agg.prompt_recall)]))
    atomic_write_text(out / "ablation.csv", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------- inspect

def stamp_markers(shape, points, value: int = 255, canvas: np.ndarray | None = None) -> np.ndarray:
    """3x3 squares centred on each point, clipped at the border."""
    g = np.zeros(shape, dtype=np.uint8) if canvas is None else canvas.copy()
    h, w = shape
    for p in points:
        g[max(p.y - 1, 0):min(p.y + 2, h), max(p.x - 1, 0):min(p.x + 2, w)] = value
    return g


def render_stage(stage: str, run_dir: Path, image_id: str) -> np.ndarray:
    manifest = _load_json(run_dir / "manifest.json")
    res = _load_json(run_dir / image_id / "result.json")
    shape = tuple(res["shape"])
    idm_cfg = IdmConfig(**manifest["config"]["idm"])
    if stage == "prompts":
        pts = [PixelPoint(p["x"], p["y"]) for p in res["prompts_final"]]
        return stamp_markers(shape, pts)
    if stage == "masks":
        masks = read_masks(run_dir / image_id / "masks.jsonl")
        g = np.zeros(shape, dtype=np.uint8)
        for m in masks:
            g[m.mask.astype(bool)] = 255
        return g
    dm_path = run_dir / image_id / "dm_final.psg"
    if not dm_path.exists():
        raise UsageError(f"{image_id} has no stored density map")
    dm = read_grid(dm_path).astype(np.float64)
    if stage == "dm":
        top = dm.max()
        scaled = dm * (255.0 / top) if top > 0 else np.zeros_like(dm)
        return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)
    gray = normalize_to_gray(dm)
    if stage == "gray":
        return gray
    b = binarize(gray, idm_cfg.t_bin)
    if stage == "binary":
        return b * np.uint8(255)
    e = erode3x3(b)
    if stage == "eroded":
        return e * np.uint8(255)
    # contours: boundaries at 128, contour-path centroids as 255 markers
    g = np.zeros(shape, dtype=np.uint8)
    for c in extract_contours(e):
        g[c.boundary[:, 1], c.boundary[:, 0]] = 128
    pts = [p for r in contour_path(gray, idm_cfg) for p in r.points]
    return stamp_markers(shape, pts, canvas=g)


def cmd_inspect(a) -> int:
    if a.stage not in STAGES:
        raise UsageError(f"unknown stage {a.stage!r}; choose from {', '.join(STAGES)}")
    run_dir = Path(a.run)
    if not (run_dir / a.image / "result.json").is_file():
        raise UsageError(f"no run output for image {a.image!r} under {run_dir}")
    export_pgm(render_stage(a.stage, run_dir, a.image), a.out)
    return 0


# ---------------------------------------------------------------- main

def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="persense", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate seeded synthetic scenes and fixtures")
    s.add_argument("--spec", required=True, help="JSON object of scene fields")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)

    def run_flags(q, variant_default=None):
        q.add_argument("--data", required=True)
        q.add_argument("--out", required=True)
        q.add_argument("--variant", choices=("persense", "persense_pp"), default=variant_default)
        q.add_argument("--config", help="flat key=value file")
        q.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        q.add_argument("--seed", type=int)
        q.add_argument("--jobs", type=int)

    r = sub.add_parser("run", help="run the pipeline over a synthetic data directory")
    run_flags(r)
    r.set_defaults(fn=cmd_run)

    e = sub.add_parser("eval", help="score a run against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--jobs", type=int)
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("ablate", help="sweep one parameter with run + eval per value")
    b.add_argument("--param", required=True)
    b.add_argument("--values", required=True)
    run_flags(b, "persense")
    b.set_defaults(fn=cmd_ablate)

    i = sub.add_parser("inspect", help="export one pipeline stage as a PGM")
    i.add_argument("--image", required=True)
    i.add_argument("--stage", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--run", required=True, help="run output directory")
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    try:
        a = _parser().parse_args(argv)
        return a.fn(a)
    except UsageError as e:
        print(f"persense: error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return int(e.code or 0)
    except Exception as e:  # noqa: BLE001
        print(f"persense: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
