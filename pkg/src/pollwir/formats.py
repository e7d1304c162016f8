"""
Readers and writers for every on-disk format.

Canonical files (the exact bytes these writers emit) survive a
read-then-write cycle byte for byte. Parse failures raise
:class:`~pollwir.errors.ParseError` with a line number for text formats or
a byte offset for binary ones.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import ParseError, ValidationError
from .eval import (
    APMethod,
    BoundingBox,
    ClassResult,
    Detection,
    EvalReport,
    GroundTruth,
    PRPoint,
)
from .polarimetry import DEFAULT_LAYOUT, PolarFrame, QuadFrame, RawMosaicFrame, StokesFrame, validate_layout
from .synth import Background, SceneSpec, Target

PGM_MAXVAL = 65535
QUAD_SUFFIXES = {0: "_i000.pgm", 45: "_i045.pgm", 90: "_i090.pgm", 135: "_i135.pgm"}
ANNOTATION_HEADER = ["frame_id", "x_min", "y_min", "x_max", "y_max", "class"]
DETECTION_HEADER = ["frame_id", "x_min", "y_min", "x_max", "y_max", "score", "class"]
STOKES_PLANES = ["I", "Q", "U"]
POLAR_PLANES = ["P", "phi", "valid"]


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _load_json(path) -> object:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("not UTF-8 text", path=str(path), offset=exc.start) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=str(path), line=exc.lineno) from None


def format_number(x: float) -> str:
    """Shortest text that parses back to ``x``; integral values drop the ``.0``."""
    x = float(x)
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


# -- PGM ---------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def decode_pgm(buf: bytes, path: str | None = None) -> np.ndarray:
    """Decode a 16-bit binary PGM (``P5``, maxval 65535, big-endian samples)."""
    if buf[:2] != b"P5":
        raise ParseError(f"bad magic {buf[:2]!r}, expected b'P5'", path=path, offset=0, field="magic")
    pos = 2
    values = {}
    for name in ("width", "height", "maxval"):
        if pos >= len(buf) or not (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            raise ParseError("expected whitespace", path=path, offset=pos, field=name)
        m = _PGM_TOKEN.match(buf, pos)
        if m is None:
            raise ParseError("missing header token", path=path, offset=pos, field=name)
        tok = m.group(1)
        if not tok.isdigit():
            raise ParseError(f"not a decimal integer: {tok!r}", path=path, offset=m.start(1), field=name)
        values[name] = int(tok)
        pos = m.end(1)
        if name == "maxval" and values[name] != PGM_MAXVAL:
            raise ParseError(
                f"maxval {values[name]} unsupported, expected {PGM_MAXVAL}",
                path=path, offset=m.start(1), field="maxval",
            )
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ParseError("expected single whitespace before raster", path=path, offset=pos, field="maxval")
    pos += 1
    w, h = values["width"], values["height"]
    if w < 1 or h < 1:
        raise ParseError(f"empty image {w}x{h}", path=path, offset=pos, field="width")
    need = w * h * 2
    if len(buf) - pos != need:
        raise ParseError(f"raster has {len(buf) - pos} bytes, expected {need}", path=path, offset=pos, field="data")
    return np.frombuffer(buf, dtype=">u2", count=w * h, offset=pos).reshape(h, w).astype(np.float64)


def encode_pgm(plane: np.ndarray) -> bytes:
    """
    Encode a plane as canonical 16-bit PGM.

    Values are rounded to the nearest integer (half up); anything outside
    [0, 65535] or non-finite is rejected rather than silently clipped.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValidationError(f"PGM plane must be 2-D, got shape {plane.shape}")
    if not np.all(np.isfinite(plane)):
        raise ValidationError("PGM samples must be finite")
    rounded = np.floor(plane + 0.5)
    if rounded.min() < 0 or rounded.max() > PGM_MAXVAL:
        raise ValidationError(f"PGM samples must lie within [0, {PGM_MAXVAL}]")
    h, w = plane.shape
    data = rounded.astype(">u2").tobytes()
    return b"P5\n%d %d\n%d\n" % (w, h, PGM_MAXVAL) + data


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes(), str(path))


def write_pgm(path, plane: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(plane))


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def read_mosaic(path) -> RawMosaicFrame:
    """Read a mosaic PGM, honouring a ``<stem>.json`` layout sidecar if present."""
    data = read_pgm(path)
    layout = dict(DEFAULT_LAYOUT)
    side = sidecar_path(path)
    if side.exists():
        meta = _load_json(side)
        if not isinstance(meta, dict) or not isinstance(meta.get("layout"), dict):
            raise ParseError("sidecar must be an object with a 'layout' object", path=str(side), field="layout")
        try:
            layout = validate_layout(meta["layout"])
        except (ValidationError, TypeError, ValueError) as exc:
            raise ParseError(str(exc), path=str(side), field="layout") from None
    return RawMosaicFrame(data, layout)


def write_mosaic(path, frame: RawMosaicFrame, sidecar: bool | None = None) -> None:
    """Write a mosaic PGM; the sidecar is written when asked or when the layout is non-default."""
    write_pgm(path, frame.data)
    if sidecar or (sidecar is None and frame.layout != DEFAULT_LAYOUT):
        sidecar_path(path).write_text(_dump_json({"layout": frame.layout}), encoding="utf-8")


def quad_paths(prefix) -> dict[int, Path]:
    prefix = str(prefix)
    return {angle: Path(prefix + suffix) for angle, suffix in QUAD_SUFFIXES.items()}


def read_quad(prefix) -> QuadFrame:
    planes = {f"i{a}": read_pgm(p) for a, p in quad_paths(prefix).items()}
    shapes = {k: v.shape for k, v in planes.items()}
    if len(set(shapes.values())) != 1:
        raise ParseError(f"quad planes differ in size: {shapes}", path=str(prefix), field="width")
    return QuadFrame(**planes)


def write_quad(prefix, quad: QuadFrame) -> None:
    for angle, p in quad_paths(prefix).items():
        write_pgm(p, quad.plane(angle))


# -- float64 plane stacks ----------------------------------------------------

def raw_path(descriptor) -> Path:
    return Path(descriptor).with_suffix(".f64")


def write_planes(descriptor, names: Sequence[str], planes: Sequence[np.ndarray]) -> None:
    """Write a JSON descriptor plus a ``.f64`` file of little-endian float64 planes, plane-major."""
    planes = [np.asarray(p, dtype=np.float64) for p in planes]
    h, w = planes[0].shape
    desc = {"width": w, "height": h, "planes": list(names), "dtype": "f64le"}
    Path(descriptor).write_text(_dump_json(desc), encoding="utf-8")
    raw_path(descriptor).write_bytes(b"".join(p.astype("<f8").tobytes() for p in planes))


def read_planes(descriptor, expected: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    desc = _load_json(descriptor)
    path = str(descriptor)
    if not isinstance(desc, dict):
        raise ParseError("descriptor must be a JSON object", path=path)
    for key in ("width", "height", "planes", "dtype"):
        if key not in desc:
            raise ParseError("missing key", path=path, field=key)
    if desc["dtype"] != "f64le":
        raise ParseError(f"unsupported dtype {desc['dtype']!r}", path=path, field="dtype")
    w, h, names = desc["width"], desc["height"], desc["planes"]
    if not (isinstance(w, int) and isinstance(h, int) and w > 0 and h > 0):
        raise ParseError("width and height must be positive integers", path=path, field="width")
    if not (isinstance(names, list) and all(isinstance(n, str) for n in names) and names):
        raise ParseError("planes must be a non-empty list of names", path=path, field="planes")
    if expected is not None and names != list(expected):
        raise ParseError(f"planes {names} != expected {list(expected)}", path=path, field="planes")
    buf = raw_path(descriptor).read_bytes()
    need = 8 * w * h * len(names)
    if len(buf) != need:
        raise ParseError(f"raw data has {len(buf)} bytes, expected {need}", path=str(raw_path(descriptor)), offset=0, field="data")
    arr = np.frombuffer(buf, dtype="<f8").reshape(len(names), h, w).astype(np.float64)
    return {n: arr[k] for k, n in enumerate(names)}


def write_stokes(descriptor, stokes: StokesFrame) -> None:
    write_planes(descriptor, STOKES_PLANES, [stokes.I, stokes.Q, stokes.U])


def read_stokes(descriptor) -> StokesFrame:
    p = read_planes(descriptor, STOKES_PLANES)
    return StokesFrame(p["I"], p["Q"], p["U"])


def write_polar(descriptor, polar: PolarFrame) -> None:
    write_planes(descriptor, POLAR_PLANES, [polar.P, polar.phi, polar.valid.astype(np.float64)])


def read_polar(descriptor) -> PolarFrame:
    p = read_planes(descriptor, POLAR_PLANES)
    if not np.all((p["valid"] == 0) | (p["valid"] == 1)):
        raise ParseError("valid plane must hold only 0 and 1", path=str(descriptor), field="valid")
    return PolarFrame(p["P"], p["phi"], p["valid"] == 1)


# -- 8-bit images ------------------------------------------------------------

def write_image(path, rgb: np.ndarray, fmt: str | None = None) -> None:
    """Write an (H, W, 3) uint8 image as PNG or binary PPM (``P6``)."""
    fmt = (fmt or Path(path).suffix.lstrip(".") or "png").lower()
    if fmt not in ("png", "ppm"):
        raise ValidationError(f"unsupported image format {fmt!r}")
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), "RGB").save(path, format=fmt.upper())


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


# -- CSV ---------------------------------------------------------------------

def _parse_float(value: str, path, line: int, field: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise ParseError(f"not a number: {value!r}", path=path, line=line, field=field) from None
    if not math.isfinite(x):
        raise ParseError(f"not finite: {value!r}", path=path, line=line, field=field)
    return x


def _read_rows(path, header: list[str]):
    path = str(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError("empty file, missing header", path=path, line=1) from None
        if first != header:
            raise ParseError(f"header {first} != {header}", path=path, line=1, field="header")
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} columns, got {len(row)}", path=path, line=reader.line_num)
            yield reader.line_num, dict(zip(header, row))


def _row_box(row: dict, path, line: int) -> BoundingBox:
    coords = [_parse_float(row[k], path, line, k) for k in ("x_min", "y_min", "x_max", "y_max")]
    if not (coords[2] > coords[0]):
        raise ParseError("x_max must exceed x_min", path=str(path), line=line, field="x_max")
    if not (coords[3] > coords[1]):
        raise ParseError("y_max must exceed y_min", path=str(path), line=line, field="y_max")
    return BoundingBox(*coords)


def read_annotations(path) -> list[GroundTruth]:
    return [
        GroundTruth(row["frame_id"], row["class"], _row_box(row, path, line))
        for line, row in _read_rows(path, ANNOTATION_HEADER)
    ]


def read_detections(path) -> list[Detection]:
    out = []
    for line, row in _read_rows(path, DETECTION_HEADER):
        box = _row_box(row, path, line)
        score = _parse_float(row["score"], path, line, "score")
        if not (0.0 <= score <= 1.0):
            raise ParseError(f"score {score!r} outside [0, 1]", path=str(path), line=line, field="score")
        out.append(Detection(row["frame_id"], row["class"], box, score))
    return out


def _write_csv(path, header: list[str], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_annotations(path, gts: Sequence[GroundTruth]) -> None:
    _write_csv(path, ANNOTATION_HEADER, (
        [g.frame_id, *map(format_number, g.box.as_tuple()), g.class_label] for g in gts
    ))


def write_detections(path, dets: Sequence[Detection]) -> None:
    _write_csv(path, DETECTION_HEADER, (
        [d.frame_id, *map(format_number, d.box.as_tuple()), format_number(d.score), d.class_label] for d in dets
    ))


# -- evaluation reports ------------------------------------------------------

def report_to_dict(report: EvalReport) -> dict:
    return {
        "iou_threshold": report.iou_threshold,
        "ap_method": report.ap_method.value,
        "map": report.map,
        "per_class": {
            cls: {
                "ap": r.ap,
                "n_gt": r.n_gt,
                "n_det": r.n_det,
                "pr": [
                    {
                        "score_threshold": p.score_threshold,
                        "precision": p.precision,
                        "recall": p.recall,
                        "tp": p.tp,
                        "fp": p.fp,
                        "fn": p.fn,
                    }
                    for p in r.pr
                ],
            }
            for cls, r in report.per_class.items()
        },
        "flags": list(report.flags),
    }


def report_from_dict(d: dict, path: str | None = None) -> EvalReport:
    try:
        per_class = {
            cls: ClassResult(
                ap=float(r["ap"]),
                pr=[
                    PRPoint(float(p["score_threshold"]), float(p["precision"]), float(p["recall"]),
                            int(p["tp"]), int(p["fp"]), int(p["fn"]))
                    for p in r["pr"]
                ],
                n_gt=int(r["n_gt"]),
                n_det=int(r["n_det"]),
            )
            for cls, r in d["per_class"].items()
        }
        return EvalReport(
            per_class=per_class,
            map=float(d["map"]),
            iou_threshold=float(d["iou_threshold"]),
            ap_method=APMethod(d["ap_method"]),
            flags=[str(f) for f in d.get("flags", [])],
        )
    except KeyError as exc:
        raise ParseError("missing key", path=path, field=str(exc.args[0])) from None
    except (TypeError, ValueError, AttributeError) as exc:
        raise ParseError(str(exc), path=path) from None


def write_report(path, report: EvalReport) -> None:
    Path(path).write_text(_dump_json(report_to_dict(report)), encoding="utf-8")


def read_report(path) -> EvalReport:
    d = _load_json(path)
    if not isinstance(d, dict):
        raise ParseError("report must be a JSON object", path=str(path))
    return report_from_dict(d, str(path))


def write_pr_csv(path, pr: Sequence[PRPoint]) -> None:
    _write_csv(path, ["score_threshold", "precision", "recall"], (
        [format_number(p.score_threshold), format_number(p.precision), format_number(p.recall)] for p in pr
    ))


def pr_svg(curves: dict[str, Sequence[PRPoint]], size: int = 400) -> str:
    """Minimal SVG line plot of precision against recall on [0, 1]^2."""
    pad = 40
    span = size - 2 * pad
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]

    def xy(r, p):
        return f"{pad + r * span:.2f},{pad + (1 - p) * span:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">recall</text>',
        f'<text x="12" y="{size / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 12 {size / 2})">precision</text>',
    ]
    for tick in (0.0, 0.5, 1.0):
        parts.append(f'<text x="{pad + tick * span:.2f}" y="{pad + span + 14}" text-anchor="middle" font-size="10">{tick:g}</text>')
        parts.append(f'<text x="{pad - 6}" y="{pad + (1 - tick) * span + 4:.2f}" text-anchor="end" font-size="10">{tick:g}</text>')
    for k, (label, pr) in enumerate(curves.items()):
        colour = colours[k % len(colours)]
        pts = " ".join(xy(p.recall, p.precision) for p in pr)
        if pts:
            parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{pad + 6}" y="{pad + 14 + 14 * k}" font-size="11" fill="{colour}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_pr_svg(path, curves: dict[str, Sequence[PRPoint]]) -> None:
    Path(path).write_text(pr_svg(curves), encoding="utf-8")


# -- scene specifications ----------------------------------------------------

def scene_to_dict(spec: SceneSpec) -> dict:
    bg = spec.background
    return {
        "width": spec.width,
        "height": spec.height,
        "background": {"I_mean": bg.I_mean, "I_std": bg.I_std, "P_max": bg.P_max},
        "targets": [
            {"rect": list(t.rect.as_tuple()), "I": t.I, "P": t.P, "phi": t.phi, "class": t.class_label}
            for t in spec.targets
        ],
        "noise_std": spec.noise_std,
        "seed": spec.seed,
    }


def scene_from_dict(d: dict, path: str | None = None) -> SceneSpec:
    try:
        bg = d.get("background", {})
        targets = [
            Target(
                rect=BoundingBox(*(float(v) for v in t["rect"])),
                I=float(t["I"]),
                P=float(t["P"]),
                phi=float(t.get("phi", 0.0)),
                class_label=str(t.get("class", "vehicle")),
            )
            for t in d.get("targets", [])
        ]
        return SceneSpec(
            width=int(d["width"]),
            height=int(d["height"]),
            background=Background(**{k: float(v) for k, v in bg.items()}),
            targets=tuple(targets),
            noise_std=float(d.get("noise_std", 0.0)),
            seed=int(d.get("seed", 0)),
        )
    except KeyError as exc:
        raise ParseError("missing key", path=path, field=str(exc.args[0])) from None
    except TypeError as exc:
        raise ParseError(str(exc), path=path) from None


def read_scene(path) -> SceneSpec:
    d = _load_json(path)
    if not isinstance(d, dict):
        raise ParseError("scene spec must be a JSON object", path=str(path))
    return scene_from_dict(d, str(path))


def write_scene(path, spec: SceneSpec) -> None:
    Path(path).write_text(_dump_json(scene_to_dict(spec)), encoding="utf-8")


# -- sequence manifests ------------------------------------------------------

@dataclass(frozen=True)
class ManifestFrame:
    frame_id: str
    mosaic: Path | None = None
    quad: Path | None = None


@dataclass(frozen=True)
class SequenceManifest:
    name: str
    frames: tuple[ManifestFrame, ...]
    split: str = "TEST"
    annotations_path: Path | None = None


def load_manifest(path) -> SequenceManifest:
    """
    Load a sequence manifest.

    Relative file references resolve against the manifest's directory. Frame
    order is file order; frame ids must be unique and every referenced file
    must exist.
    """
    path = Path(path)
    d = _load_json(path)
    p = str(path)
    if not isinstance(d, dict):
        raise ParseError("manifest must be a JSON object", path=p)
    base = path.parent

    def resolve(ref) -> Path:
        q = Path(ref)
        return q if q.is_absolute() else base / q

    split = d.get("split", "TEST")
    if split not in ("TRAIN", "TEST"):
        raise ParseError(f"split must be TRAIN or TEST, got {split!r}", path=p, field="split")
    if not isinstance(d.get("frames"), list):
        raise ParseError("frames must be a list", path=p, field="frames")
    frames = []
    seen = set()
    for k, f in enumerate(d["frames"]):
        if not isinstance(f, dict) or "frame_id" not in f:
            raise ParseError(f"frame {k} needs a frame_id", path=p, field="frames")
        fid = str(f["frame_id"])
        if fid in seen:
            raise ParseError(f"duplicate frame_id {fid!r}", path=p, field="frame_id")
        seen.add(fid)
        if ("mosaic" in f) == ("quad" in f):
            raise ParseError(f"frame {fid!r} must name exactly one of 'mosaic' or 'quad'", path=p, field="frames")
        if "mosaic" in f:
            entry = ManifestFrame(fid, mosaic=resolve(f["mosaic"]))
            missing = [entry.mosaic] if not entry.mosaic.exists() else []
        else:
            entry = ManifestFrame(fid, quad=resolve(f["quad"]))
            missing = [q for q in quad_paths(entry.quad).values() if not q.exists()]
        if missing:
            raise ParseError(f"frame {fid!r}: missing file {missing[0]}", path=p, field="frames")
        frames.append(entry)
    ann = d.get("annotations")
    ann_path = resolve(ann) if ann is not None else None
    if ann_path is not None and not ann_path.exists():
        raise ParseError(f"annotations file {ann_path} does not exist", path=p, field="annotations")
    return SequenceManifest(str(d.get("name", path.stem)), tuple(frames), split, ann_path)


def write_manifest(path, manifest: SequenceManifest) -> None:
    base = Path(path).parent

    def rel(q: Path) -> str:
        return os.path.relpath(q, base)

    frames = []
    for f in manifest.frames:
        entry = {"frame_id": f.frame_id}
        if f.mosaic is not None:
            entry["mosaic"] = rel(f.mosaic)
        else:
            entry["quad"] = rel(f.quad)
        frames.append(entry)
    d = {"name": manifest.name, "split": manifest.split, "frames": frames}
    if manifest.annotations_path is not None:
        d["annotations"] = rel(manifest.annotations_path)
    Path(path).write_text(_dump_json(d), encoding="utf-8")


def read_pipeline_config(path) -> list[dict]:
    d = _load_json(path)
    p = str(path)
    if not isinstance(d, dict) or not isinstance(d.get("stages"), list):
        raise ParseError("pipeline config needs a 'stages' list", path=p, field="stages")
    stages = []
    for k, s in enumerate(d["stages"]):
        if not isinstance(s, dict) or not isinstance(s.get("op"), str):
            raise ParseError(f"stage {k} needs an 'op' name", path=p, field="op")
        params = s.get("params", {})
        if not isinstance(params, dict):
            raise ParseError(f"stage {k} params must be an object", path=p, field="params")
        stages.append({"op": s["op"], "params": params})
    return stages
