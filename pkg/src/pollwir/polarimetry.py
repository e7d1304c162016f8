"""
Mosaic frames to Stokes and linear-polarisation planes.

A division-of-focal-plane sensor interleaves four linear polarisers
(0, 45, 90 and 135 degrees) in every 2x2 cell. ``demosaic`` splits the
mosaic into four co-registered intensity planes, ``compute_stokes`` turns
those into (I, Q, U), and ``compute_polar`` derives the degree ``P`` and
angle ``phi`` of linear polarisation. ``compose_channels`` and
``render_pseudocolor`` produce the 8-bit three-plane exports.

All arithmetic is float64; conversion to 8 bits happens only at export.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from matplotlib.colors import hsv_to_rgb
from PIL import Image, ImageDraw

from .errors import DimensionError, PhysicalityError, ValidationError

ANGLES = (0, 45, 90, 135)
CELL_OFFSETS = {"tl": (0, 0), "tr": (0, 1), "bl": (1, 0), "br": (1, 1)}
DEFAULT_LAYOUT = {"tl": 0, "tr": 45, "bl": 135, "br": 90}

EPS_I = 1e-6
EPS_QU = 1e-6


def _frozen(a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D plane, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _check_nonnegative(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    if np.any(arr < 0):
        r, c = np.argwhere(arr < 0)[0]
        raise ValidationError(f"{name} contains negative intensity at row={r}, col={c}")


def _check_same_shape(planes: dict[str, np.ndarray]) -> None:
    shapes = {k: v.shape for k, v in planes.items()}
    if len(set(shapes.values())) != 1:
        raise DimensionError(f"plane dimensions differ: {shapes}")


def validate_layout(layout: dict) -> dict[str, int]:
    """Check that ``layout`` maps the four cell offsets onto the four angles."""
    if set(layout) != set(CELL_OFFSETS):
        raise ValidationError(f"layout keys must be {sorted(CELL_OFFSETS)}, got {sorted(layout)}")
    angles = sorted(int(v) for v in layout.values())
    if angles != list(ANGLES):
        raise ValidationError(f"layout must assign each of {ANGLES} exactly once, got {layout}")
    return {k: int(layout[k]) for k in ("tl", "tr", "bl", "br")}


@dataclass(frozen=True)
class RawMosaicFrame:
    """One interleaved micro-polariser plane of shape (height, width)."""

    data: np.ndarray
    layout: dict = field(default_factory=lambda: dict(DEFAULT_LAYOUT))

    def __post_init__(self):
        data = _frozen(self.data, "mosaic")
        h, w = data.shape
        if h % 2 or w % 2:
            raise DimensionError(f"mosaic dimensions must be even, got {w}x{h}")
        _check_nonnegative(data, "mosaic")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "layout", validate_layout(self.layout))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class QuadFrame:
    """Four co-registered intensity planes, one per polariser angle."""

    i0: np.ndarray
    i45: np.ndarray
    i90: np.ndarray
    i135: np.ndarray

    def __post_init__(self):
        planes = {}
        for name in ("i0", "i45", "i90", "i135"):
            arr = _frozen(getattr(self, name), name)
            _check_nonnegative(arr, name)
            planes[name] = arr
            object.__setattr__(self, name, arr)
        _check_same_shape(planes)

    @property
    def width(self) -> int:
        return self.i0.shape[1]

    @property
    def height(self) -> int:
        return self.i0.shape[0]

    def plane(self, angle: int) -> np.ndarray:
        return getattr(self, f"i{angle}")


@dataclass(frozen=True)
class StokesFrame:
    """Linear Stokes planes. Circular ``V`` is not measurable with this sensor."""

    I: np.ndarray
    Q: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        planes = {}
        for name in ("I", "Q", "U"):
            arr = _frozen(getattr(self, name), name)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
            planes[name] = arr
            object.__setattr__(self, name, arr)
        _check_same_shape(planes)
        if np.any(self.I < 0):
            r, c = np.argwhere(self.I < 0)[0]
            raise PhysicalityError("I must be non-negative", (int(r), int(c)))

    @property
    def width(self) -> int:
        return self.I.shape[1]

    @property
    def height(self) -> int:
        return self.I.shape[0]


@dataclass(frozen=True)
class PolarFrame:
    """Degree ``P`` and angle ``phi`` of linear polarisation with a validity mask.

    ``n_clamped`` counts valid pixels whose raw degree exceeded 1 and was
    clamped (a symptom of sensor noise).
    """

    P: np.ndarray
    phi: np.ndarray
    valid: np.ndarray
    n_clamped: int = 0

    def __post_init__(self):
        P = _frozen(self.P, "P")
        phi = _frozen(self.phi, "phi")
        valid = np.array(self.valid, dtype=bool, copy=True)
        valid.setflags(write=False)
        _check_same_shape({"P": P, "phi": phi, "valid": valid})
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "valid", valid)

    @property
    def width(self) -> int:
        return self.P.shape[1]

    @property
    def height(self) -> int:
        return self.P.shape[0]


class DemosaicStrategy(enum.Enum):
    SUPERPIXEL_BIN = "superpixel_bin"
    NEAREST = "nearest"


class ChannelConfig(enum.Enum):
    INTENSITY = "intensity"
    IQU = "iqu"
    IPPHI = "ipphi"


@dataclass(frozen=True)
class PlaneNorm:
    """Affine map ``v = 255 * (x - lo) / (hi - lo)``, clipped, rounded half up.

    ``hi == lo`` marks a degenerate plane; see :func:`normalize_plane`.
    """

    name: str
    lo: float
    hi: float
    method: str

    def to_dict(self) -> dict:
        return {"name": self.name, "lo": self.lo, "hi": self.hi, "method": self.method}


@dataclass(frozen=True)
class ChannelStack:
    config: ChannelConfig
    planes: np.ndarray  # (3, H, W) uint8
    normalization: tuple[PlaneNorm, PlaneNorm, PlaneNorm]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    def to_image(self) -> np.ndarray:
        """Interleave as an (H, W, 3) array for image encoders."""
        return np.ascontiguousarray(np.moveaxis(self.planes, 0, -1))


def demosaic(frame: RawMosaicFrame, strategy=DemosaicStrategy.SUPERPIXEL_BIN) -> QuadFrame:
    """
    Split a 2W x 2H mosaic into a W x H ``QuadFrame``.

    Each output pixel takes the four samples of the corresponding 2x2 cell,
    routed to angles by ``frame.layout``. For a cell-aligned layout the
    ``NEAREST`` strategy selects exactly the same samples; it exists so that
    shifted layouts can be supported without changing callers.
    """
    strategy = DemosaicStrategy(strategy)
    data = frame.data
    if data.shape[0] % 2 or data.shape[1] % 2:
        raise DimensionError(f"mosaic dimensions must be even, got {data.shape[1]}x{data.shape[0]}")
    planes = {}
    for key, angle in frame.layout.items():
        dr, dc = CELL_OFFSETS[key]
        planes[f"i{angle}"] = data[dr::2, dc::2]
    return QuadFrame(**planes)


def mosaic(quad: QuadFrame, layout: dict | None = None) -> RawMosaicFrame:
    """Interleave a ``QuadFrame`` back into a mosaic (inverse of :func:`demosaic`)."""
    layout = validate_layout(layout or DEFAULT_LAYOUT)
    out = np.empty((2 * quad.height, 2 * quad.width), dtype=np.float64)
    for key, angle in layout.items():
        dr, dc = CELL_OFFSETS[key]
        out[dr::2, dc::2] = quad.plane(angle)
    return RawMosaicFrame(out, layout)


def compute_stokes(quad: QuadFrame) -> StokesFrame:
    I = 0.5 * (quad.i0 + quad.i45 + quad.i90 + quad.i135)
    Q = quad.i0 - quad.i90
    U = quad.i45 - quad.i135
    return StokesFrame(I, Q, U)


def synthesize_quad(stokes: StokesFrame) -> QuadFrame:
    """
    Exact algebraic inverse of :func:`compute_stokes`.

    Requires ``|Q| <= I`` and ``|U| <= I`` everywhere so that every
    polariser intensity is non-negative.

    Raises
    ------
    PhysicalityError
        naming the first offending pixel in row-major order.
    """
    I, Q, U = stokes.I, stokes.Q, stokes.U
    bad = (np.abs(Q) > I) | (np.abs(U) > I)
    if np.any(bad):
        r, c = np.argwhere(bad)[0]
        raise PhysicalityError(
            f"|Q| <= I and |U| <= I required; got I={I[r, c]!r}, Q={Q[r, c]!r}, U={U[r, c]!r}",
            (int(r), int(c)),
        )
    return QuadFrame(
        i0=0.5 * (I + Q),
        i45=0.5 * (I + U),
        i90=0.5 * (I - Q),
        i135=0.5 * (I - U),
    )


def fold_angle(phi: np.ndarray) -> np.ndarray:
    """Map angles defined modulo pi into (-pi/2, pi/2]."""
    phi = np.asarray(phi, dtype=np.float64)
    phi = np.where(phi <= -math.pi / 2, phi + math.pi, phi)
    return np.where(phi > math.pi / 2, phi - math.pi, phi)


def compute_polar(stokes: StokesFrame, eps_I: float = EPS_I, eps_QU: float = EPS_QU) -> PolarFrame:
    """
    Degree and angle of linear polarisation.

    ``P = min(1, sqrt(Q^2 + U^2) / I)`` and ``phi = atan2(U, Q) / 2`` folded
    into (-pi/2, pi/2]. Pixels with ``I <= eps_I``, or with both ``|Q|`` and
    ``|U|`` at most ``eps_QU``, have no defined angle: they are marked
    invalid and carry ``P = phi = 0``.
    """
    if not (eps_I > 0 and eps_QU > 0):
        raise ValidationError("eps_I and eps_QU must be positive")
    I, Q, U = stokes.I, stokes.Q, stokes.U
    valid = (I > eps_I) & ~((np.abs(Q) <= eps_QU) & (np.abs(U) <= eps_QU))
    safe_I = np.where(valid, I, 1.0)
    raw = np.where(valid, np.sqrt(Q * Q + U * U) / safe_I, 0.0)
    n_clamped = int(np.count_nonzero(raw > 1.0))
    P = np.minimum(raw, 1.0)
    phi = np.where(valid, fold_angle(0.5 * np.arctan2(U, Q)), 0.0)
    return PolarFrame(P, phi, valid, n_clamped)


def _round_half_up(v: np.ndarray) -> np.ndarray:
    return np.floor(v + 0.5)


def normalize_plane(x: np.ndarray, norm: PlaneNorm) -> np.ndarray:
    """Apply ``norm`` and return uint8 values.

    A degenerate range (``hi == lo``) sends the whole plane to the midpoint
    128 for symmetric planes and to 0 otherwise.
    """
    if norm.hi == norm.lo:
        fill = 128 if norm.method == "symmetric" else 0
        return np.full(x.shape, fill, dtype=np.uint8)
    v = 255.0 * (x - norm.lo) / (norm.hi - norm.lo)
    return _round_half_up(np.clip(v, 0.0, 255.0)).astype(np.uint8)


def unit_scale(x: np.ndarray, norm: PlaneNorm) -> np.ndarray:
    """The same affine map as :func:`normalize_plane`, as floats in [0, 1]."""
    if norm.hi == norm.lo:
        return np.full(x.shape, 0.5 if norm.method == "symmetric" else 0.0)
    return np.clip((x - norm.lo) / (norm.hi - norm.lo), 0.0, 1.0)


def intensity_norm(I: np.ndarray) -> PlaneNorm:
    lo, hi = np.percentile(I, [1.0, 99.0])
    return PlaneNorm("I", float(lo), float(hi), "percentile")


def symmetric_norm(x: np.ndarray, name: str) -> PlaneNorm:
    m = float(np.percentile(np.abs(x), 99.0))
    return PlaneNorm(name, -m, m, "symmetric")


def compose_channels(stokes: StokesFrame, polar: PolarFrame | None = None, config=ChannelConfig.IQU) -> ChannelStack:
    """
    Build a three-plane 8-bit stack for one of the input configurations.

    I maps its 1st..99th percentile range onto 0..255; Q and U map
    [-M, M] with M the 99th percentile of their magnitude, so zero lands on
    128; P and phi use their fixed ranges [0, 1] and (-pi/2, pi/2].
    ``INTENSITY`` repeats the I plane three times.
    """
    config = ChannelConfig(config)
    i_norm = intensity_norm(stokes.I)
    if config is ChannelConfig.INTENSITY:
        norms = (i_norm, i_norm, i_norm)
        sources = (stokes.I, stokes.I, stokes.I)
    elif config is ChannelConfig.IQU:
        norms = (i_norm, symmetric_norm(stokes.Q, "Q"), symmetric_norm(stokes.U, "U"))
        sources = (stokes.I, stokes.Q, stokes.U)
    else:
        if polar is None:
            raise ValidationError("IPPHI configuration requires a PolarFrame")
        if polar.P.shape != stokes.I.shape:
            raise DimensionError(f"polar {polar.P.shape} does not match stokes {stokes.I.shape}")
        norms = (
            i_norm,
            PlaneNorm("P", 0.0, 1.0, "fixed"),
            PlaneNorm("phi", -math.pi / 2, math.pi / 2, "fixed"),
        )
        sources = (stokes.I, polar.P, polar.phi)
    planes = np.stack([normalize_plane(x, n) for x, n in zip(sources, norms)])
    planes.setflags(write=False)
    return ChannelStack(config, planes, norms)


def render_pseudocolor(stokes: StokesFrame, polar: PolarFrame) -> np.ndarray:
    """
    HSV pseudo-colour image of shape (H, W, 3), uint8.

    Hue encodes the angle (``(phi + pi/2) / pi`` of a full turn), saturation
    the degree ``P`` (zero at invalid pixels) and value the normalised
    intensity.
    """
    if polar.P.shape != stokes.I.shape:
        raise DimensionError(f"polar {polar.P.shape} does not match stokes {stokes.I.shape}")
    hue = (polar.phi + math.pi / 2) / math.pi
    sat = np.where(polar.valid, np.clip(polar.P, 0.0, 1.0), 0.0)
    val = unit_scale(stokes.I, intensity_norm(stokes.I))
    rgb = hsv_to_rgb(np.stack([hue, sat, val], axis=-1))
    return _round_half_up(np.clip(rgb * 255.0, 0.0, 255.0)).astype(np.uint8)


def render_overlay(rgb: np.ndarray, detections, score_threshold: float = 0.7, colour=(255, 255, 0)) -> np.ndarray:
    """Draw the boxes of detections scoring at least ``score_threshold`` onto a copy of ``rgb``."""
    im = Image.fromarray(np.asarray(rgb, dtype=np.uint8), "RGB")
    draw = ImageDraw.Draw(im)
    for d in detections:
        if d.score < score_threshold:
            continue
        b = d.box
        # box edges are pixel boundaries; the last covered pixel is max - 1
        draw.rectangle([b.x_min, b.y_min, max(b.x_min, b.x_max - 1), max(b.y_min, b.y_max - 1)], outline=colour)
    return np.asarray(im)
