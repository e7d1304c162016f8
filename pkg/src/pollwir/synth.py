"""
Synthetic labelled polarimetric scenes.

Backgrounds are weakly polarised clutter; targets are rectangles with a
fixed (I, P, phi) signature. Randomness comes from numpy's PCG64 bit
generator seeded through ``SeedSequence([seed, stream])``, with stream 0
for scene generation and 1 for sensor noise so the two never share draws.
The PCG64 stream is stable across platforms, so the same specification and
seed reproduce the same frames bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PhysicalityError, ValidationError
from .eval import BoundingBox, GroundTruth
from .polarimetry import QuadFrame, StokesFrame, synthesize_quad

_SCENE_STREAM = 0
_NOISE_STREAM = 1


@dataclass(frozen=True)
class Background:
    I_mean: float = 1000.0
    I_std: float = 50.0
    P_max: float = 0.1


@dataclass(frozen=True)
class Target:
    rect: BoundingBox
    I: float
    P: float
    phi: float = 0.0
    class_label: str = "vehicle"


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    background: Background = field(default_factory=Background)
    targets: tuple[Target, ...] = ()
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"scene must have positive size, got {self.width}x{self.height}")
        if self.seed < 0:
            raise ValidationError("seed must be an unsigned integer")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")
        bg = self.background
        if bg.I_mean < 0 or bg.I_std < 0:
            raise PhysicalityError("background intensity statistics must be non-negative")
        if not (0.0 <= bg.P_max <= 1.0):
            raise PhysicalityError(f"background P_max must lie in [0, 1], got {bg.P_max!r}")
        for k, t in enumerate(self.targets):
            r = t.rect
            if not all(float(v).is_integer() for v in r.as_tuple()):
                raise ValidationError(f"target {k}: rectangle corners must be whole pixels")
            if r.x_min < 0 or r.y_min < 0 or r.x_max > self.width or r.y_max > self.height:
                raise ValidationError(f"target {k}: rectangle {r.as_tuple()} outside frame")
            if t.I < 0:
                raise PhysicalityError(f"target {k}: intensity must be non-negative")
            if not (0.0 < t.P <= 1.0):
                raise PhysicalityError(f"target {k}: P must lie in (0, 1], got {t.P!r}")
            if not (-math.pi / 2 < t.phi <= math.pi / 2):
                raise ValidationError(f"target {k}: phi must lie in (-pi/2, pi/2]")


def generate_scene(spec: SceneSpec, frame_id: str = "f000") -> tuple[StokesFrame, list[GroundTruth]]:
    """
    Ground-truth Stokes planes and target labels for ``spec``.

    Background pixels get I ~ N(I_mean, I_std) clipped at 0, P uniform on
    [0, P_max] and phi uniform on (-pi/2, pi/2]; target rectangles then
    overwrite their pixels with ``Q = I P cos(2 phi)``, ``U = I P sin(2 phi)``.
    """
    rng = np.random.default_rng([spec.seed, _SCENE_STREAM])
    shape = (spec.height, spec.width)
    bg = spec.background
    I = np.maximum(rng.normal(bg.I_mean, bg.I_std, shape), 0.0)
    P = rng.uniform(0.0, bg.P_max, shape)
    phi = math.pi / 2 - rng.uniform(0.0, math.pi, shape)
    I_t = np.array(I)
    Q = I * P * np.cos(2 * phi)
    U = I * P * np.sin(2 * phi)
    labels = []
    for t in spec.targets:
        r = t.rect
        sl = (slice(int(r.y_min), int(r.y_max)), slice(int(r.x_min), int(r.x_max)))
        I_t[sl] = t.I
        Q[sl] = t.I * t.P * math.cos(2 * t.phi)
        U[sl] = t.I * t.P * math.sin(2 * t.phi)
        labels.append(GroundTruth(frame_id, t.class_label, r))
    # cos/sin rounding can push |Q| a hair over I when P == 1
    Q = np.clip(Q, -I_t, I_t)
    U = np.clip(U, -I_t, I_t)
    return StokesFrame(I_t, Q, U), labels


def observe(truth: StokesFrame, noise_std: float = 0.0, seed: int = 0) -> QuadFrame:
    """Forward sensor model: exact polariser intensities plus clamped Gaussian noise."""
    if noise_std < 0:
        raise ValidationError("noise_std must be non-negative")
    clean = synthesize_quad(truth)
    if noise_std == 0:
        return clean
    rng = np.random.default_rng([seed, _NOISE_STREAM])
    planes = {}
    for name in ("i0", "i45", "i90", "i135"):
        base = getattr(clean, name)
        planes[name] = np.maximum(base + rng.normal(0.0, noise_std, base.shape), 0.0)
    return QuadFrame(**planes)


def random_scene_spec(
    seed: int,
    width: int = 320,
    height: int = 256,
    n_targets: tuple[int, int] = (3, 8),
    target_I: float = 1000.0,
    noise_frac: float = 0.0,
    gap: int = 3,
) -> SceneSpec:
    """
    A scene of non-overlapping vehicle-sized targets on weak clutter.

    Targets are separated by at least ``gap`` pixels so that no two merge
    into one connected region. ``noise_frac`` sets the per-channel noise as
    a fraction of the target intensity.
    """
    rng = np.random.default_rng([seed, 2])
    count = int(rng.integers(n_targets[0], n_targets[1] + 1))
    rects: list[tuple[int, int, int, int]] = []
    attempts = 0
    while len(rects) < count:
        attempts += 1
        if attempts > 10_000:
            raise ValidationError(f"cannot place {count} targets in a {width}x{height} frame")
        w = int(rng.integers(12, 41))
        h = int(rng.integers(8, 31))
        x0 = int(rng.integers(0, width - w + 1))
        y0 = int(rng.integers(0, height - h + 1))
        cand = (x0, y0, x0 + w, y0 + h)
        if all(
            cand[0] >= r[2] + gap or r[0] >= cand[2] + gap or cand[1] >= r[3] + gap or r[1] >= cand[3] + gap
            for r in rects
        ):
            rects.append(cand)
    targets = tuple(
        Target(
            rect=BoundingBox(*map(float, r)),
            I=target_I,
            P=float(rng.uniform(0.6, 0.95)),
            phi=float(math.pi / 2 - rng.uniform(0.0, math.pi)),
        )
        for r in rects
    )
    return SceneSpec(
        width=width,
        height=height,
        background=Background(I_mean=target_I, I_std=0.05 * target_I, P_max=0.1),
        targets=targets,
        noise_std=noise_frac * target_I,
        seed=seed,
    )
