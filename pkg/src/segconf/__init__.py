"""Segment-level confidence for semantic segmentation maps.

Per-pixel margin, negative entropy and a last-layer gradient statistic are
fused with per-segment coverage into one confidence value per pixel, then
aggregated over connected components of the predicted label map to flag
(and optionally abstain on) likely-wrong segments.
"""

from .config import RunConfig
from .errors import SegConfError
from .pipeline import Assessment, EvalReport, assess, evaluate
from .raster import ClassSet, FeatureCube, LabelRaster, ProbCube, StatRaster
from .synth import SceneSpec, generate

__version__ = "0.1.0"

__all__ = [
    "Assessment",
    "ClassSet",
    "EvalReport",
    "FeatureCube",
    "LabelRaster",
    "ProbCube",
    "RunConfig",
    "SceneSpec",
    "SegConfError",
    "StatRaster",
    "assess",
    "evaluate",
    "generate",
]
