"""
Throughput timing for pipeline stages.

Per-frame time is averaged over a batch (100 frames by default) after a
few untimed warm-up frames, and reported as frames per second.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Callable, Iterable, Sequence

from .errors import ValidationError


@dataclass(frozen=True)
class TimingReport:
    stage_name: str
    n_frames: int
    total_seconds: float
    mean_ms_per_frame: float
    fps: float
    warmup_frames: int
    cycled: bool = False
    include_io: bool = False
    mode: str = "sequential"
    workers: int = 1

    def summary(self) -> str:
        return f"stage={self.stage_name} fps={self.fps:.3f} mean_ms={self.mean_ms_per_frame:.3f}"

    def to_dict(self) -> dict:
        return asdict(self)


def _materialise(out: Any) -> Any:
    # generators and other lazy iterables must finish inside the timed region
    if isinstance(out, Iterable) and not isinstance(out, (list, tuple, dict, str, bytes)) and not hasattr(out, "shape"):
        return list(out)
    return out


def busy_wait(ms: float) -> Callable[[Any], Any]:
    """A stage that spins for ``ms`` milliseconds and returns its input."""
    seconds = ms / 1000.0

    def stage(frame):
        end = time.perf_counter() + seconds
        while time.perf_counter() < end:
            pass
        return frame

    stage.__name__ = f"busywait_{ms:g}ms"
    return stage


def time_stage(
    stage: Callable[[Any], Any],
    frames: Sequence[Any],
    n: int = 100,
    warmup: int = 5,
    name: str | None = None,
    loader: Callable[[Any], Any] | None = None,
    include_io: bool = False,
    workers: int = 1,
) -> TimingReport:
    """
    Run ``stage`` on ``warmup`` frames untimed, then time ``n`` frames.

    ``frames`` is cycled if it holds fewer than ``warmup + n`` items; the
    report records that. When ``loader`` is given, frames are handles (e.g.
    paths) it turns into stage inputs; loading happens before timing unless
    ``include_io`` is set. ``workers > 1`` maps frames over a thread pool and
    reports aggregate throughput labelled ``mode="parallel"``.
    """
    if not frames:
        raise ValidationError("frame source is empty")
    if n < 1 or warmup < 0 or workers < 1:
        raise ValidationError("need n >= 1, warmup >= 0 and workers >= 1")
    total = warmup + n
    cycled = len(frames) < total
    batch = list(itertools.islice(itertools.cycle(frames), total))

    if loader is not None and include_io:
        def run(item):
            return _materialise(stage(loader(item)))
    else:
        if loader is not None:
            batch = [loader(item) for item in batch]

        def run(item):
            return _materialise(stage(item))

    for item in batch[:warmup]:
        run(item)
    timed = batch[warmup:]

    if workers == 1:
        start = time.perf_counter()
        for item in timed:
            run(item)
        elapsed = time.perf_counter() - start
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            start = time.perf_counter()
            list(pool.map(run, timed))
            elapsed = time.perf_counter() - start

    return TimingReport(
        stage_name=name or getattr(stage, "__name__", "stage"),
        n_frames=n,
        total_seconds=elapsed,
        mean_ms_per_frame=1000.0 * elapsed / n,
        fps=n / elapsed,
        warmup_frames=warmup,
        cycled=cycled,
        include_io=include_io,
        mode="sequential" if workers == 1 else "parallel",
        workers=workers,
    )
