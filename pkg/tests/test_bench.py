import time

import numpy as np
import pytest

from pollwir.bench import busy_wait, time_stage
from pollwir.errors import ValidationError
from pollwir.polarimetry import RawMosaicFrame, compute_polar, compute_stokes, demosaic


def test_busy_wait_fps():
    rep = time_stage(busy_wait(10), [None], n=100, warmup=5)
    assert 90 <= rep.fps <= 110
    assert rep.cycled and rep.n_frames == 100 and rep.warmup_frames == 5


def test_report_identities():
    rep = time_stage(busy_wait(1), list(range(3)), n=7, warmup=1)
    assert rep.fps * rep.total_seconds == pytest.approx(rep.n_frames, rel=1e-12)
    assert rep.mean_ms_per_frame == pytest.approx(1000 * rep.total_seconds / rep.n_frames, rel=1e-12)
    assert rep.summary().startswith("stage=busywait_1ms fps=")


def test_single_frame():
    rep = time_stage(lambda f: f, [1], n=1, warmup=0)
    assert rep.fps == 1 / rep.total_seconds
    assert not rep.cycled


def test_empty_source_rejected():
    with pytest.raises(ValidationError):
        time_stage(lambda f: f, [])


def test_identity_faster_than_real_stage():
    frame = RawMosaicFrame(np.random.default_rng(0).uniform(0, 1000, (128, 160)))

    def real(f):
        return compute_polar(compute_stokes(demosaic(f)))

    fast = time_stage(lambda f: f, [frame], n=30, warmup=2)
    slow = time_stage(real, [frame], n=30, warmup=2)
    assert fast.fps > slow.fps


def test_warmup_runs_untimed():
    calls = []
    time_stage(calls.append, [0], n=3, warmup=4)
    assert len(calls) == 7


def test_lazy_outputs_materialised():
    seen = []

    def lazy(frame):
        def gen():
            time.sleep(0.002)
            seen.append(frame)
            yield frame
        return gen()

    rep = time_stage(lazy, [1, 2], n=4, warmup=0)
    assert len(seen) == 4
    assert rep.mean_ms_per_frame >= 2.0


def test_loader_excluded_unless_requested():
    def slow_load(item):
        time.sleep(0.005)
        return item

    out = time_stage(lambda f: f, ["a"], n=5, warmup=0, loader=slow_load)
    inc = time_stage(lambda f: f, ["a"], n=5, warmup=0, loader=slow_load, include_io=True)
    assert out.mean_ms_per_frame < 5.0 <= inc.mean_ms_per_frame
    assert inc.include_io and not out.include_io


def test_parallel_mode_labelled():
    rep = time_stage(busy_wait(1), [0], n=8, warmup=0, workers=2)
    assert rep.mode == "parallel" and rep.workers == 2
