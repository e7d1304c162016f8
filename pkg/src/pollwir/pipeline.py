"""
Configurable per-frame stage chains.

A pipeline is a list of ``{"op": name, "params": {...}}`` stages applied to
every frame of a sequence manifest. Each stage reads what it needs from a
per-frame state dict and adds its product; ``eval`` runs once over all
frames at the end.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import detector, formats, polarimetry
from .errors import ValidationError
from .eval import EvalReport, evaluate

log = logging.getLogger(__name__)

FRAME_OPS = ("demosaic", "stokes", "polar", "compose", "render", "detect")
ALL_OPS = FRAME_OPS + ("eval",)


@dataclass
class PipelineResult:
    frames: list[dict]
    detections: list = field(default_factory=list)
    report: EvalReport | None = None


def _need(state: dict, key: str, op: str):
    if key not in state:
        raise ValidationError(f"stage '{op}' needs '{key}', which no earlier stage produced")
    return state[key]


def _demosaic(state, params):
    raw = _need(state, "raw", "demosaic")
    state["quad"] = polarimetry.demosaic(raw, params.get("strategy", "superpixel_bin"))


def _stokes(state, params):
    state["stokes"] = polarimetry.compute_stokes(_need(state, "quad", "stokes"))


def _polar(state, params):
    state["polar"] = polarimetry.compute_polar(
        _need(state, "stokes", "polar"),
        params.get("eps_I", polarimetry.EPS_I),
        params.get("eps_QU", polarimetry.EPS_QU),
    )


def _compose(state, params):
    config = polarimetry.ChannelConfig(params.get("config", "iqu").lower())
    state["channels"] = polarimetry.compose_channels(
        _need(state, "stokes", "compose"), state.get("polar"), config
    )


def _render(state, params):
    rgb = polarimetry.render_pseudocolor(_need(state, "stokes", "render"), _need(state, "polar", "render"))
    if params.get("overlay", False) and "detections" in state:
        rgb = polarimetry.render_overlay(rgb, state["detections"], params.get("threshold", 0.7))
    state["render"] = rgb


def _detect(state, params):
    blob = detector.BlobParams.from_dict({k: v for k, v in params.items() if k != "class"})
    state["detections"] = detector.detect_blobs(
        _need(state, "polar", "detect"), blob, state["frame_id"], params.get("class", "vehicle")
    )


_STAGES: dict[str, Callable[[dict, dict], None]] = {
    "demosaic": _demosaic,
    "stokes": _stokes,
    "polar": _polar,
    "compose": _compose,
    "render": _render,
    "detect": _detect,
}


def validate_stages(stages: list[dict]) -> None:
    for k, s in enumerate(stages):
        if s["op"] not in ALL_OPS:
            raise ValidationError(f"stage {k}: unknown op {s['op']!r}; expected one of {ALL_OPS}")
        if s["op"] == "eval" and k != len(stages) - 1:
            raise ValidationError("'eval' must be the last stage")


def _load_frame(entry: formats.ManifestFrame) -> dict:
    state = {"frame_id": entry.frame_id}
    if entry.mosaic is not None:
        state["raw"] = formats.read_mosaic(entry.mosaic)
    else:
        state["quad"] = formats.read_quad(entry.quad)
    return state


def _write_outputs(state: dict, out_dir: Path, image_format: str) -> None:
    fid = state["frame_id"]
    if "quad" in state and "raw" in state:
        formats.write_quad(out_dir / fid, state["quad"])
    if "stokes" in state:
        formats.write_stokes(out_dir / f"{fid}_stokes.json", state["stokes"])
    if "polar" in state:
        formats.write_polar(out_dir / f"{fid}_polar.json", state["polar"])
    if "channels" in state:
        formats.write_image(out_dir / f"{fid}_{state['channels'].config.value}.{image_format}",
                            state["channels"].to_image(), image_format)
    if "render" in state:
        formats.write_image(out_dir / f"{fid}_render.{image_format}", state["render"], image_format)


def run_frame(state: dict, stages: list[dict]) -> dict:
    for s in stages:
        if s["op"] != "eval":
            _STAGES[s["op"]](state, s["params"])
    return state


def run_pipeline(
    stages: list[dict],
    manifest: formats.SequenceManifest,
    out_dir=None,
    workers: int = 1,
    image_format: str = "png",
) -> PipelineResult:
    """
    Apply ``stages`` to every frame of ``manifest``.

    Frames may be processed on ``workers`` threads; results keep manifest
    order and every output file is named by frame_id, so the on-disk result
    does not depend on scheduling.
    """
    validate_stages(stages)

    def process(entry):
        state = run_frame(_load_frame(entry), stages)
        if out_dir is not None:
            _write_outputs(state, Path(out_dir), image_format)
        return state

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            states = list(pool.map(process, manifest.frames))
    else:
        states = [process(e) for e in manifest.frames]

    dets = [d for s in states for d in s.get("detections", [])]
    result = PipelineResult(states, dets)
    if out_dir is not None and any(s["op"] == "detect" for s in stages):
        formats.write_detections(Path(out_dir) / "detections.csv", dets)

    if stages and stages[-1]["op"] == "eval":
        params = stages[-1]["params"]
        if manifest.annotations_path is None:
            raise ValidationError("'eval' stage needs an annotations file in the manifest")
        gts = formats.read_annotations(manifest.annotations_path)
        result.report = evaluate(
            dets, gts, params.get("iou_threshold", 0.5), params.get("method", "ALL_POINT").upper()
        )
        log.info("mAP %.4f over %d frames", result.report.map, len(states))
        if out_dir is not None:
            formats.write_report(Path(out_dir) / "report.json", result.report)
    return result
