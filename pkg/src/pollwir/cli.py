"""Command-line entry point: ``pollwir <subcommand> ...``.

Exit status is 0 on success, 2 when the input fails validation and 1 on
any other error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, bench, detector, formats, pipeline, polarimetry, synth
from .errors import ValidationError
from .eval import evaluate

log = logging.getLogger("pollwir")


def _out(args, name: str) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / name


def _stem(path: str) -> str:
    stem = Path(path).name
    for suffix in (".json", ".pgm", "_stokes", "_polar"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
    return stem


def _parse_layout(text: str) -> dict:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 4:
        raise ValidationError("--layout needs four comma-separated angles for tl,tr,bl,br")
    try:
        return polarimetry.validate_layout(dict(zip(("tl", "tr", "bl", "br"), map(int, parts))))
    except ValueError as exc:
        raise ValidationError(f"bad --layout: {exc}") from None


def cmd_demosaic(args):
    frame = formats.read_mosaic(args.mosaic)
    if args.layout:
        frame = polarimetry.RawMosaicFrame(frame.data, _parse_layout(args.layout))
    quad = polarimetry.demosaic(frame, args.strategy)
    formats.write_quad(_out(args, _stem(args.mosaic)), quad)
    print(f"{args.mosaic}: {frame.width}x{frame.height} -> {quad.width}x{quad.height}")


def cmd_stokes(args):
    stokes = polarimetry.compute_stokes(formats.read_quad(args.quad_prefix))
    formats.write_stokes(_out(args, f"{_stem(args.quad_prefix)}_stokes.json"), stokes)


def cmd_polar(args):
    polar = polarimetry.compute_polar(formats.read_stokes(args.stokes), args.eps_i, args.eps_qu)
    formats.write_polar(_out(args, f"{_stem(args.stokes)}_polar.json"), polar)
    print(f"valid={int(polar.valid.sum())} clamped={polar.n_clamped}")


def cmd_compose(args):
    stokes = formats.read_stokes(args.stokes)
    polar = formats.read_polar(args.polar) if args.polar else None
    stack = polarimetry.compose_channels(stokes, polar, args.config)
    base = f"{_stem(args.stokes)}_{stack.config.value}"
    formats.write_image(_out(args, f"{base}.{args.format}"), stack.to_image(), args.format)
    _out(args, f"{base}_norm.json").write_text(
        json.dumps({"config": stack.config.value, "normalization": [n.to_dict() for n in stack.normalization]}, indent=2)
        + "\n",
        encoding="utf-8",
    )


def cmd_render(args):
    stokes = formats.read_stokes(args.stokes)
    polar = formats.read_polar(args.polar)
    rgb = polarimetry.render_pseudocolor(stokes, polar)
    if args.detections:
        dets = formats.read_detections(args.detections)
        if args.frame_id is not None:
            dets = [d for d in dets if d.frame_id == args.frame_id]
        rgb = polarimetry.render_overlay(rgb, dets, args.threshold)
    formats.write_image(_out(args, f"{_stem(args.stokes)}_render.{args.format}"), rgb, args.format)


def _write_scene_outputs(args, spec: synth.SceneSpec, frame_id: str) -> tuple[formats.ManifestFrame, list]:
    truth, labels = synth.generate_scene(spec, frame_id)
    quad = synth.observe(truth, spec.noise_std, spec.seed)
    formats.write_stokes(_out(args, f"{frame_id}_truth.json"), truth)
    mosaic_path = _out(args, f"{frame_id}.pgm")
    formats.write_mosaic(mosaic_path, polarimetry.mosaic(quad))
    return formats.ManifestFrame(frame_id, mosaic=mosaic_path), labels


def cmd_synth(args):
    if args.scene:
        spec = formats.read_scene(args.scene)
        if args.seed is not None:
            spec = synth.SceneSpec(spec.width, spec.height, spec.background, spec.targets, spec.noise_std, args.seed)
        specs = [spec]
    else:
        base = args.seed or 0
        specs = [
            synth.random_scene_spec(base + k, args.width, args.height, noise_frac=args.noise_frac)
            for k in range(args.random)
        ]
    entries, labels = [], []
    for k, spec in enumerate(specs):
        fid = args.frame_id if len(specs) == 1 and args.frame_id else f"f{k:03d}"
        entry, lab = _write_scene_outputs(args, spec, fid)
        entries.append(entry)
        labels.extend(lab)
        formats.write_scene(_out(args, f"{fid}_scene.json"), spec)
    ann = _out(args, "annotations.csv")
    formats.write_annotations(ann, labels)
    manifest = formats.SequenceManifest(args.name, tuple(entries), "TEST", ann)
    formats.write_manifest(_out(args, "manifest.json"), manifest)
    print(f"wrote {len(entries)} frame(s), {len(labels)} target(s) to {args.out_dir}")


def _blob_params(args) -> detector.BlobParams:
    values = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        values.update(cfg.get("detector", cfg))
    for key in ("p_threshold", "min_area", "connectivity", "nms_iou"):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    return detector.BlobParams.from_dict(values)


def cmd_detect(args):
    params = _blob_params(args)
    frame_id = args.frame_id or _stem(args.polar)
    dets = detector.detect_blobs(formats.read_polar(args.polar), params, frame_id, args.class_label)
    formats.write_detections(_out(args, f"{frame_id}_detections.csv"), dets)
    print(f"{frame_id}: {len(dets)} detection(s)")


def cmd_eval(args):
    gts = formats.read_annotations(args.gt)
    dets = formats.read_detections(args.det)
    report = evaluate(dets, gts, args.iou_threshold, args.method)
    formats.write_report(_out(args, "report.json"), report)
    for cls, res in report.per_class.items():
        formats.write_pr_csv(_out(args, f"pr_{cls}.csv"), res.pr)
    if args.svg:
        formats.write_pr_svg(_out(args, "pr.svg"), {cls: r.pr for cls, r in report.per_class.items()})
    for flag in report.flags:
        log.warning(flag)
    print(f"mAP={report.map:.4f} method={report.ap_method.value} iou>{report.iou_threshold:g}")


def _bench_stage(args):
    if args.stage == "busywait":
        return bench.busy_wait(args.busy_ms), [None], None
    if not args.input:
        raise ValidationError(f"--input mosaic is required for stage '{args.stage}'")
    params = detector.BlobParams()
    chain = {
        "demosaic": [polarimetry.demosaic],
        "stokes": [polarimetry.demosaic, polarimetry.compute_stokes],
        "polar": [polarimetry.demosaic, polarimetry.compute_stokes, polarimetry.compute_polar],
        "detect": [
            polarimetry.demosaic,
            polarimetry.compute_stokes,
            polarimetry.compute_polar,
            lambda p: detector.detect_blobs(p, params),
        ],
    }[args.stage]

    def stage(frame):
        for fn in chain:
            frame = fn(frame)
        return frame

    return stage, [args.input], formats.read_mosaic


def cmd_bench(args):
    stage, frames, loader = _bench_stage(args)
    report = bench.time_stage(
        stage, frames, args.n, args.warmup, name=args.stage, loader=loader,
        include_io=args.include_io, workers=args.workers,
    )
    print(report.summary())
    if args.json:
        _out(args, args.json).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")


def cmd_pipeline(args):
    stages = formats.read_pipeline_config(args.config)
    manifest = formats.load_manifest(args.manifest)
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    result = pipeline.run_pipeline(stages, manifest, args.out_dir, args.workers, args.format)
    print(f"processed {len(result.frames)} frame(s)")
    if result.report is not None:
        print(f"mAP={result.report.map:.4f}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every random draw")
    common.add_argument("--out-dir", default=".", help="directory for outputs")
    common.add_argument("--format", choices=["png", "ppm"], default="png", help="8-bit image format")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pollwir", description="Polarimetric LWIR processing and detection scoring")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demosaic", parents=[common], help="split a mosaic PGM into four angle planes")
    p.add_argument("mosaic")
    p.add_argument("--strategy", choices=[s.value for s in polarimetry.DemosaicStrategy], default="superpixel_bin")
    p.add_argument("--layout", help="angles at tl,tr,bl,br, e.g. 0,45,135,90 (overrides the sidecar)")
    p.set_defaults(func=cmd_demosaic)

    p = sub.add_parser("stokes", parents=[common], help="quad PGMs to Stokes I, Q, U")
    p.add_argument("quad_prefix", help="path prefix of the <prefix>_iNNN.pgm files")
    p.set_defaults(func=cmd_stokes)

    p = sub.add_parser("polar", parents=[common], help="Stokes to degree/angle of polarisation")
    p.add_argument("stokes", help="Stokes descriptor JSON")
    p.add_argument("--eps-i", type=float, default=polarimetry.EPS_I)
    p.add_argument("--eps-qu", type=float, default=polarimetry.EPS_QU)
    p.set_defaults(func=cmd_polar)

    p = sub.add_parser("compose", parents=[common], help="8-bit three-plane channel stack")
    p.add_argument("stokes")
    p.add_argument("--polar", help="polar descriptor JSON (required for ipphi)")
    p.add_argument("--config", choices=[c.value for c in polarimetry.ChannelConfig], default="iqu")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("render", parents=[common], help="HSV pseudo-colour render")
    p.add_argument("stokes")
    p.add_argument("polar")
    p.add_argument("--detections", help="detections CSV to overlay")
    p.add_argument("--frame-id", help="only overlay detections of this frame")
    p.add_argument("--threshold", type=float, default=0.7, help="minimum score for overlay boxes")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic labelled scenes")
    p.add_argument("--scene", help="SceneSpec JSON; omit to generate random scenes")
    p.add_argument("--random", type=int, default=1, help="number of random scenes")
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--noise-frac", type=float, default=0.0, help="noise std as a fraction of target I")
    p.add_argument("--frame-id")
    p.add_argument("--name", default="synthetic")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", parents=[common], help="baseline polarisation-blob detector")
    p.add_argument("polar")
    p.add_argument("--frame-id")
    p.add_argument("--class", dest="class_label", default="vehicle")
    p.add_argument("--config", help="JSON with detector parameters (optionally under 'detector')")
    p.add_argument("--p-threshold", dest="p_threshold", type=float)
    p.add_argument("--min-area", dest="min_area", type=int)
    p.add_argument("--connectivity", type=int, choices=[4, 8])
    p.add_argument("--nms-iou", dest="nms_iou", type=float)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="score detections against ground truth")
    p.add_argument("--gt", required=True, help="annotations CSV")
    p.add_argument("--det", required=True, help="detections CSV")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--method", choices=["ALL_POINT", "ELEVEN_POINT"], default="ALL_POINT")
    p.add_argument("--svg", action="store_true", help="also write a PR curve plot")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="average per-frame timing and fps")
    p.add_argument("--stage", choices=["busywait", "demosaic", "stokes", "polar", "detect"], default="detect")
    p.add_argument("--input", help="mosaic PGM used as the frame source")
    p.add_argument("-n", type=int, default=100)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--busy-ms", type=float, default=10.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--include-io", action="store_true", help="time file decoding too")
    p.add_argument("--json", help="also write the TimingReport JSON under --out-dir")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("pipeline", parents=[common], help="run a JSON stage chain over a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
