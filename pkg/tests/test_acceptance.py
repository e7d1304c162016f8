"""
Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
happen; they are also repeated in the terminal summary.
"""

import itertools
import math
import random
import time
from fractions import Fraction

import numpy as np

from conftest import ACCEPTANCE_LINES
from oracles import ap_by_threshold_enumeration, box_iou_exact, greedy_tp_count, polar_scalar
from pollwir import formats
from pollwir.bench import busy_wait, time_stage
from pollwir.detector import detect_blobs, nms
from pollwir.eval import (
    APMethod,
    BoundingBox,
    Detection,
    GroundTruth,
    average_precision,
    evaluate,
    iou,
    match_detections,
    precision_recall,
)
from pollwir.polarimetry import StokesFrame, compute_polar, compute_stokes, synthesize_quad
from pollwir.synth import generate_scene, observe, random_scene_spec


def report(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def random_stokes(rng, h, w, p_over=1.0):
    # intensities over several decades, P up to p_over (clamped later if > 1)
    I = 10.0 ** rng.uniform(-3, 6, (h, w))
    P = rng.uniform(0, p_over, (h, w))
    phi = rng.uniform(-math.pi / 2, math.pi / 2, (h, w))
    return I, I * P * np.cos(2 * phi), I * P * np.sin(2 * phi)


def det(frame, box, score, cls="vehicle"):
    return Detection(frame, cls, BoundingBox(*map(float, box)), float(score))


def gt(frame, box, cls="vehicle"):
    return GroundTruth(frame, cls, BoundingBox(*map(float, box)))


def ap_of(dets, gts, thr=0.5):
    return average_precision(precision_recall(match_detections(dets, gts, thr), len(gts)), APMethod.ALL_POINT)


def oracle_inputs(dets, gts):
    return (
        [(d.frame_id, d.box.as_tuple(), d.score, i) for i, d in enumerate(dets)],
        [(g.frame_id, g.box.as_tuple()) for g in gts],
    )


def test_stokes_round_trip():
    rng = np.random.default_rng(101)
    frames = [StokesFrame(*random_stokes(rng, 64, 64)) for _ in range(1000)]
    worst = 0.0
    t0 = time.perf_counter()
    for s in frames:
        back = compute_stokes(synthesize_quad(s))
        for a, b in ((back.I, s.I), (back.Q, s.Q), (back.U, s.U)):
            # relative to the pixel's intensity, which bounds |Q| and |U|
            worst = max(worst, float(np.max(np.abs(a - b) / s.I)))
    elapsed = time.perf_counter() - t0
    report("stokes round trip", worst <= 1e-9 and elapsed < 5.0,
           f"1000 frames 64x64, max rel err {worst:.2e} (<= 1e-9), {elapsed:.2f} s (< 5 s)")


def test_polarisation_formulas():
    rng = np.random.default_rng(202)
    I, Q, U = random_stokes(rng, 100, 100, p_over=1.2)
    # edge cases: dark pixels, zero polarisation, the negative-Q fold, exact P = 1
    I[0, :10] = [0.0, 1e-7, 1e-6, 2e-6, 1.0, 1.0, 1.0, 2.0, 5.0, 3.0]
    Q[0, :10] = [0.0, 0.0, 0.5, 1e-6, 0.0, 1e-7, -1.0, 0.0, -3.0, 3.0]
    U[0, :10] = [0.0, 0.0, 0.0, 1e-6, 0.0, -1e-7, 0.0, 2.0, -4.0, 0.0]
    polar = compute_polar(StokesFrame(I, Q, U))
    err_p = err_phi = 0.0
    mask_ok = True
    for r, c in itertools.product(range(100), range(100)):
        P, phi, valid = polar_scalar(float(I[r, c]), float(Q[r, c]), float(U[r, c]))
        mask_ok &= bool(polar.valid[r, c]) == valid
        err_p = max(err_p, abs(polar.P[r, c] - P))
        err_phi = max(err_phi, abs(polar.phi[r, c] - phi))

    scale_err = 0.0
    for k in (1e-3, 7.5, 1e4):
        scaled = compute_polar(StokesFrame(k * I, k * Q, k * U))
        both = scaled.valid & polar.valid
        scale_err = max(scale_err, float(np.max(np.abs(scaled.P[both] - polar.P[both]))))

    flipped = compute_polar(StokesFrame(I, Q, -U))
    v = polar.valid
    at_fold = np.abs(polar.phi) == math.pi / 2
    # phi lives on a circle of period pi: -(pi/2) is the same angle as +pi/2
    expected = np.where(at_fold, math.pi / 2, -polar.phi)
    anti_err = float(np.max(np.abs(flipped.phi[v] - expected[v])))
    anti_ok = np.array_equal(flipped.valid, v) and np.array_equal(flipped.P, polar.P)

    ok = mask_ok and err_p <= 1e-12 and err_phi <= 1e-12 and scale_err <= 1e-12 and anti_err <= 1e-12 and anti_ok
    report("polarisation formulas", ok,
           f"10000 px, mask {'ok' if mask_ok else 'MISMATCH'}, max |dP| {err_p:.1e}, max |dphi| {err_phi:.1e}, "
           f"scale {scale_err:.1e}, antisym {anti_err:.1e} (all <= 1e-12)")


def test_iou():
    e1 = abs(iou(BoundingBox(0, 0, 10, 10), BoundingBox(0, 0, 10, 10)) - 1.0)
    e2 = abs(iou(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 30, 30)) - 0.0)
    e3 = abs(iou(BoundingBox(0, 0, 10, 10), BoundingBox(5, 5, 15, 15)) - 1 / 7)
    rng = random.Random(303)
    asym = 0
    worst = 0.0
    for _ in range(10000):
        boxes = []
        for _ in range(2):
            x, y = rng.uniform(0, 50), rng.uniform(0, 50)
            boxes.append(BoundingBox(x, y, x + rng.uniform(0.1, 30), y + rng.uniform(0.1, 30)))
        a, b = boxes
        asym += iou(a, b) != iou(b, a)
        worst = max(worst, abs(iou(a, b) - float(box_iou_exact(a.as_tuple(), b.as_tuple()))))
    ok = max(e1, e2, e3) <= 1e-12 and asym == 0 and worst <= 1e-12
    report("IoU", ok, f"worked examples max err {max(e1, e2, e3):.1e}, {asym} asymmetric of 10000 pairs, "
                      f"max err vs exact {worst:.1e}")


# Box palette for the exhaustive AP cases. Against GT A = (0,0,4,2) the
# detections overlap at exactly 1, 3/4, 1/2 (the strict boundary) and 1/6;
# against B = (10,0,13,2) at 2/3; the last one touches nothing.
GT_A, GT_B = (0, 0, 4, 2), (10, 0, 13, 2)
DET_PALETTE = [(0, 0, 4, 2), (1, 0, 4, 2), (0, 0, 2, 2), (2, 0, 12, 2), (10, 0, 12, 2), (20, 0, 22, 2)]
GT_CONFIGS = [(), (GT_A,), (GT_A, GT_B), (GT_A, GT_A)]
SCORES = [0.9, 0.5, 0.2]


def small_cases():
    """Exhaustive single-frame cases, then seeded multi-frame ones up to 10 detections."""
    items = list(itertools.product(DET_PALETTE, SCORES))
    for gts, n in itertools.product(GT_CONFIGS, range(4)):
        for combo in itertools.product(items, repeat=n):
            yield [det("f0", b, s) for b, s in combo], [gt("f0", b) for b in gts]
    rng = random.Random(404)
    for _ in range(3000):
        n_frames = rng.randint(1, 4)
        frames = [f"f{k}" for k in range(n_frames)]
        gts = [gt(f, b) for f in frames for b in rng.choice(GT_CONFIGS)]
        dets = [det(rng.choice(frames), rng.choice(DET_PALETTE), rng.choice(SCORES))
                for _ in range(rng.randint(0, 10))]
        yield dets, gts


def test_ap_oracle_equivalence():
    n = mismatches = 0
    for dets, gts in small_cases():
        n += 1
        if ap_of(dets, gts) != ap_by_threshold_enumeration(*oracle_inputs(dets, gts), 0.5):
            mismatches += 1
    dets = [det("f", (0, 0, 10, 10), 0.9), det("f", (50, 50, 60, 60), 0.8), det("f", (20, 0, 30, 10), 0.7)]
    worked = ap_of(dets, [gt("f", (0, 0, 10, 10)), gt("f", (20, 0, 30, 10))])
    ok = n >= 10000 and mismatches == 0 and abs(worked - 5 / 6) <= 1e-12
    report("AP oracle equivalence", ok,
           f"{n} cases (>= 10000), {mismatches} mismatches (exact), [TP,FP,TP] AP = {worked!r} (5/6)")


def test_greedy_matching():
    violations = 0
    n = 0
    for dets, gts in itertools.islice(small_cases(), 5000, None):
        n += 1
        for thr in (0.3, 0.5, 0.7):
            m = match_detections(dets, gts, thr)
            labelled_once = sorted(m.order.tolist()) == list(range(len(dets))) and len(m.is_tp) == len(dets)
            one_to_one = int(m.gt_matched.sum()) == int(m.is_tp.sum())
            oracle = greedy_tp_count(*oracle_inputs(dets, gts), thr) == int(m.is_tp.sum())
            labels = m.labels()
            justified = all(
                any(g.frame_id == d.frame_id and box_iou_exact(d.box.as_tuple(), g.box.as_tuple()) > Fraction(thr)
                    for g in gts)
                for d, tp in zip(dets, labels) if tp
            )
            violations += not (labelled_once and one_to_one and oracle and justified)
    half = [det("f", (0, 0, 2, 2), 0.9)]
    gts = [gt("f", (0, 0, 4, 2))]
    exact_half = iou(half[0].box, gts[0].box)
    fp_at_half = not match_detections(half, gts, 0.5).is_tp[0]
    tp_below = bool(match_detections(half, gts, 0.49).is_tp[0])
    ok = violations == 0 and exact_half == 0.5 and fp_at_half and tp_below
    report("greedy matching", ok,
           f"{n} cases x 3 thresholds, {violations} violations; IoU = {exact_half} scored "
           f"{'FP' if fp_at_half else 'TP'} at 0.5, {'TP' if tp_below else 'FP'} at 0.49")


def run_scene(seed, noise_frac):
    spec = random_scene_spec(seed, noise_frac=noise_frac)
    frame_id = f"s{seed:02d}"
    truth, labels = generate_scene(spec, frame_id=frame_id)
    polar = compute_polar(compute_stokes(observe(truth, spec.noise_std, spec.seed)))
    return detect_blobs(polar, frame_id=frame_id), labels, spec


def test_end_to_end_synthetic():
    t0 = time.perf_counter()
    clean_dets, clean_gts, per_scene, sizes = [], [], [], []
    for seed in range(20):
        dets, labels, spec = run_scene(seed, 0.0)
        sizes.append((spec.width, spec.height, len(spec.targets)))
        per_scene.append(evaluate(dets, labels).map)
        clean_dets += dets
        clean_gts += labels
    clean_map = evaluate(clean_dets, clean_gts).map
    noisy_dets, noisy_gts = [], []
    for seed in range(20):
        dets, labels, _ = run_scene(seed, 0.05)
        noisy_dets += dets
        noisy_gts += labels
    noisy_map = evaluate(noisy_dets, noisy_gts).map
    elapsed = time.perf_counter() - t0
    shape_ok = all(w == 320 and h == 256 and 3 <= k <= 8 for w, h, k in sizes)
    ok = shape_ok and clean_map == 1.0 and min(per_scene) == 1.0 and noisy_map >= 0.9 and elapsed < 30.0
    report("end-to-end synthetic", ok,
           f"20 scenes 320x256 with {min(k for *_, k in sizes)}-{max(k for *_, k in sizes)} targets, "
           f"noise-free AP {clean_map} (min per scene {min(per_scene)}), 5% noise AP {noisy_map:.4f} (>= 0.9), "
           f"{elapsed:.2f} s (< 30 s)")


def test_nms():
    rng = random.Random(606)
    bad_idem = bad_iou = bad_subset = 0
    for _ in range(10000):
        frames = ["a", "b"][: rng.randint(1, 2)]
        dets = []
        for _ in range(rng.randint(0, 12)):
            x, y = rng.randint(0, 20), rng.randint(0, 20)
            dets.append(det(rng.choice(frames), (x, y, x + rng.randint(1, 12), y + rng.randint(1, 12)),
                            rng.choice([0.2, 0.5, 0.5, 0.8, rng.random()])))
        thr = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9])
        out = nms(dets, thr)
        bad_idem += nms(out, thr) != out
        bad_subset += not all(d in dets for d in out)
        for i, j in itertools.combinations(range(len(out)), 2):
            a, b = out[i], out[j]
            if a.frame_id == b.frame_id and a.class_label == b.class_label and iou(a.box, b.box) > thr:
                bad_iou += 1
    ok = bad_idem == bad_iou == bad_subset == 0
    report("NMS", ok, f"10000 sets, {bad_idem} not idempotent, {bad_iou} survivor pairs above threshold, "
                      f"{bad_subset} non-subset outputs")


def test_bench_harness():
    rep = time_stage(busy_wait(10), [None], n=100, warmup=5)
    ok = 90 <= rep.fps <= 110 and rep.n_frames == 100
    report("bench harness", ok, f"10 ms busy-wait x 100 frames: fps {rep.fps:.2f} (in [90, 110]), "
                                f"mean {rep.mean_ms_per_frame:.3f} ms")


def rewrite_identical(tmp_path, name, canonical: dict[str, bytes], read, write, primary):
    src, dst = tmp_path / f"{name}_a", tmp_path / f"{name}_b"
    src.mkdir()
    dst.mkdir()
    for fname, data in canonical.items():
        (src / fname).write_bytes(data)
    write(dst / primary, read(src / primary))
    return all((dst / f).read_bytes() == data for f, data in canonical.items())


def test_format_round_trips(tmp_path):
    results = {}

    samples = np.array([[0, 1, 256], [65535, 4660, 32768]], dtype=">u2")
    pgm = b"P5\n3 2\n65535\n" + samples.tobytes()
    results["PGM"] = rewrite_identical(tmp_path, "pgm", {"p.pgm": pgm}, formats.read_pgm, formats.write_pgm, "p.pgm")

    I = np.array([[1.0, 0.1, 1 / 3], [1e300, 5e-324, 2.0]])
    stokes = StokesFrame(I, np.array([[0.5, -0.05, 0.0], [-1e299, 0.0, -2.0]]), np.array([[-0.0, 0.07, 1 / 7], [0, 0, 0.0]]))
    canon = tmp_path / "canon"
    canon.mkdir()
    formats.write_stokes(canon / "s.json", stokes)
    stokes_files = {"s.json": (canon / "s.json").read_bytes(), "s.f64": (canon / "s.f64").read_bytes()}
    back = formats.read_stokes(canon / "s.json")
    same_arrays = all(getattr(back, n).tobytes() == getattr(stokes, n).tobytes() for n in "IQU")
    results["Stokes descriptor"] = same_arrays and rewrite_identical(
        tmp_path, "stokes", stokes_files, formats.read_stokes, formats.write_stokes, "s.json")

    ann = b"frame_id,x_min,y_min,x_max,y_max,class\nf000,0,0,10,10,vehicle\nf000,10.5,2,40.25,30,vehicle\nf001,1,1,2,2,person\n"
    results["annotations CSV"] = rewrite_identical(
        tmp_path, "ann", {"a.csv": ann}, formats.read_annotations, formats.write_annotations, "a.csv")

    dets = (b"frame_id,x_min,y_min,x_max,y_max,score,class\n"
            b"f000,0,0,10,10,0.875,vehicle\nf000,3,4,5,6,0.1,vehicle\nf001,0.5,0,9,9,1,person\n")
    results["detections CSV"] = rewrite_identical(
        tmp_path, "det", {"d.csv": dets}, formats.read_detections, formats.write_detections, "d.csv")

    gts = [gt("f0", (0, 0, 10, 10)), gt("f0", (20, 0, 30, 10)), gt("f1", (0, 0, 5, 5), "person")]
    ds = [det("f0", (0, 0, 10, 10), 0.9), det("f0", (50, 50, 60, 60), 0.8), det("f0", (20, 0, 30, 10), 0.7),
          det("f1", (0, 0, 4, 5), 0.3, "person"), det("f2", (0, 0, 1, 1), 0.6, "bike")]
    rep = evaluate(ds, gts)
    formats.write_report(canon / "r.json", rep)
    rep_bytes = (canon / "r.json").read_bytes()
    results["EvalReport JSON"] = formats.read_report(canon / "r.json") == rep and rewrite_identical(
        tmp_path, "rep", {"r.json": rep_bytes}, formats.read_report, formats.write_report, "r.json")

    failed = [k for k, v in results.items() if not v]
    report("format round trips", not failed,
           ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in results.items()))
