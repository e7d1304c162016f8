"""Polarimetric LWIR frame processing, synthetic scenes and detection scoring."""

__version__ = "0.1.0"

from .errors import DimensionError, ParseError, PhysicalityError, ValidationError
from .eval import (
    APMethod,
    BoundingBox,
    Detection,
    EvalReport,
    GroundTruth,
    PRPoint,
    average_precision,
    evaluate,
    iou,
    match_detections,
    precision_recall,
)
from .polarimetry import (
    ChannelConfig,
    ChannelStack,
    DemosaicStrategy,
    PolarFrame,
    QuadFrame,
    RawMosaicFrame,
    StokesFrame,
    compose_channels,
    compute_polar,
    compute_stokes,
    demosaic,
    mosaic,
    render_overlay,
    render_pseudocolor,
    synthesize_quad,
)
from .detector import BlobParams, detect_blobs, nms
from .synth import Background, SceneSpec, Target, generate_scene, observe, random_scene_spec
from .bench import TimingReport, time_stage
