"""Fusing pixel and segment statistics into one confidence value per pixel.

Each active statistic is mapped onto [-1, 1] with percentile bounds fitted
on calibration pixels, the mapped values are summed with equal weight
(rescaled so that the sum always spans [-4, 4]), and a logistic squashes
the sum into (0, 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from scipy.special import expit

from .components import NODATA_ID, SegmentMap
from .errors import DegenerateStatistic, DimensionMismatch, MissingStatistic, TooFewPixels
from .raster import LabelRaster, StatRaster, validate_alignment
from .segment_stats import SegmentStatTable, aggregate, broadcast

FUSED_KINDS = ("margin", "neg_entropy", "gradient", "coverage")
MIN_CALIBRATION_PIXELS = 1000
LO_PERCENTILE, HI_PERCENTILE = 1.0, 99.0
SPEC_VERSION = "percentile-minmax/1"

PREDICTED_CORRECT = "predicted_correct"
PREDICTED_INCORRECT = "predicted_incorrect"


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-statistic ``(lo, hi)`` bounds mapping raw values onto [0, 1]."""

    bounds: Mapping[str, tuple[float, float]]
    version: str = SPEC_VERSION

    @property
    def active_stats(self) -> tuple[str, ...]:
        return tuple(k for k in FUSED_KINDS if k in self.bounds)

    def to_json(self) -> str:
        body = {
            "version": self.version,
            "active_stats": list(self.active_stats),
            "bounds": {k: {"lo": self.bounds[k][0], "hi": self.bounds[k][1]} for k in self.active_stats},
        }
        return json.dumps(body, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "NormalizationSpec":
        body = json.loads(text)
        bounds = {k: (float(v["lo"]), float(v["hi"])) for k, v in body["bounds"].items()}
        for k, (lo, hi) in bounds.items():
            if not lo < hi:
                raise DegenerateStatistic(f"{k}: lo {lo} is not below hi {hi}")
        return cls(bounds, body.get("version", SPEC_VERSION))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "NormalizationSpec":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True, eq=False)
class ConfidenceResult:
    pixel_conf: StatRaster
    segment_conf: np.ndarray
    incorrect: np.ndarray
    tau: float
    abstain_mask: np.ndarray
    segmap: SegmentMap
    region_used: np.ndarray

    @property
    def flags(self) -> dict[int, str]:
        return {
            i: PREDICTED_INCORRECT if bad else PREDICTED_CORRECT
            for i, bad in enumerate(self.incorrect.tolist())
        }


def _pixel_fields(
    stats: Mapping[str, StatRaster],
    coverage: Optional[SegmentStatTable],
    segmap: Optional[SegmentMap],
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Active statistics as ``kind -> (values, valid)`` pixel fields."""
    fields: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    shape = None
    for kind, stat in stats.items():
        if stat is None or stat.flags.get("omitted"):
            continue
        if shape is not None and stat.shape != shape:
            raise DimensionMismatch(f"{kind} raster shape {stat.shape} != {shape}")
        shape = stat.shape
        fields[kind] = (stat.values, stat.valid_mask)
    if coverage is not None and coverage.coverage is not None:
        segmap = segmap if segmap is not None else coverage.segmap
        if shape is not None and segmap.shape != shape:
            raise DimensionMismatch(f"segment map shape {segmap.shape} != {shape}")
        cov = broadcast(segmap, coverage.coverage)
        fields["coverage"] = (cov, segmap.segment_ids != NODATA_ID)
    return fields


def fit_normalizer(
    stats: Mapping[str, StatRaster],
    coverage: Optional[SegmentStatTable] = None,
    calibration_mask: Optional[np.ndarray] = None,
    segmap: Optional[SegmentMap] = None,
) -> NormalizationSpec:
    """Fit 1st/99th percentile bounds for every active statistic.

    ``stats`` maps kind ("margin", "neg_entropy", "gradient") to a raster;
    rasters flagged ``omitted`` are skipped. Coverage enters through the
    per-segment table, broadcast onto pixels.
    """
    fields = _pixel_fields(stats, coverage, segmap)
    bounds: dict[str, tuple[float, float]] = {}
    for kind in FUSED_KINDS:
        if kind not in fields:
            continue
        values, valid = fields[kind]
        mask = valid if calibration_mask is None else valid & calibration_mask
        sample = values[mask]
        if sample.size < MIN_CALIBRATION_PIXELS:
            raise TooFewPixels(
                f"{kind}: {sample.size} calibration pixels, need {MIN_CALIBRATION_PIXELS}"
            )
        lo, hi = np.percentile(sample, [LO_PERCENTILE, HI_PERCENTILE])
        if not lo < hi:
            raise DegenerateStatistic(f"{kind} has no spread on the calibration set ({lo} .. {hi})")
        bounds[kind] = (float(lo), float(hi))
    return NormalizationSpec(bounds)


def combine(
    stats: Mapping[str, StatRaster],
    coverage: Optional[SegmentStatTable],
    segmap: Optional[SegmentMap],
    norm: NormalizationSpec,
) -> StatRaster:
    """Pixel confidence ``sigmoid(4/m * sum_s (2 * clip01((s - lo)/(hi - lo)) - 1))``."""
    fields = _pixel_fields(stats, coverage, segmap)
    missing = [k for k in norm.active_stats if k not in fields]
    if missing:
        raise MissingStatistic(f"normalizer expects {missing} but they were not supplied")
    unfitted = [k for k in fields if k not in norm.bounds]
    if unfitted:
        raise MissingStatistic(f"no normalization bounds for {unfitted}")
    if not fields:
        raise MissingStatistic("no statistics to combine")
    shape = next(iter(fields.values()))[0].shape
    total = np.zeros(shape)
    valid = np.ones(shape, dtype=bool)
    for kind in norm.active_stats:
        values, mask = fields[kind]
        lo, hi = norm.bounds[kind]
        with np.errstate(invalid="ignore"):
            unit = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
        total += 2.0 * unit - 1.0
        valid &= mask
    total *= 4.0 / len(norm.active_stats)
    return StatRaster.build(expit(total), "confidence", valid, active=",".join(norm.active_stats))


def segment_confidence(
    conf: StatRaster,
    segmap: SegmentMap,
    agg: str = "mean",
    region: str = "inner",
    tau: float = 0.2,
) -> ConfidenceResult:
    """Aggregate pixel confidence per segment and flag segments below ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    validate_alignment(conf, segmap)
    table = aggregate(conf, segmap, agg, region)
    name = next(iter(table.aggregates))
    seg_conf = table.aggregates[name]
    with np.errstate(invalid="ignore"):
        incorrect = seg_conf < tau
        abstain = conf.valid_mask & (conf.values < tau)
    abstain.setflags(write=False)
    return ConfidenceResult(
        pixel_conf=conf,
        segment_conf=seg_conf,
        incorrect=incorrect,
        tau=tau,
        abstain_mask=abstain,
        segmap=table.segmap,
        region_used=table.region_used[name],
    )


def refine(pred: LabelRaster, result: ConfidenceResult, mode: str = "segment") -> LabelRaster:
    """Replace low-confidence predictions with the abstain sentinel.

    ``mode="pixel"`` abstains pixels with confidence below tau,
    ``mode="segment"`` abstains every pixel of a flagged segment,
    ``mode="off"`` returns ``pred`` unchanged.
    """
    validate_alignment(pred, result.segmap)
    if mode == "off":
        return pred
    if mode == "pixel":
        drop = result.abstain_mask
    elif mode == "segment":
        ids = result.segmap.segment_ids
        valid = ids != NODATA_ID
        drop = np.zeros(pred.shape, dtype=bool)
        drop[valid] = result.incorrect[ids[valid].astype(np.int64)]
    else:
        raise ValueError(f"refine mode must be 'segment', 'pixel' or 'off', got {mode!r}")
    drop = drop & pred.class_mask
    out = np.where(drop, pred.classes.abstain_index, pred.values)
    return LabelRaster.from_array(out, pred.classes)
