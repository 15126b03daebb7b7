"""End-to-end assessment and evaluation of one scene."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import evaluation as ev
from .components import SegmentMap, connected_components, inner_boundary_split
from .config import RunConfig
from .errors import DegenerateVariance, EmptyPopulation
from .fusion import (
    PREDICTED_CORRECT,
    PREDICTED_INCORRECT,
    ConfidenceResult,
    NormalizationSpec,
    combine,
    fit_normalizer,
    refine,
    segment_confidence,
)
from .pixel_stats import gradient_stat, margin, neg_entropy, predict, top_probability
from .raster import FeatureCube, LabelRaster, ProbCube, StatRaster, validate_alignment
from .segment_stats import SegmentStatTable, aggregate, coverage

REPORT_SCHEMA_VERSION = 1
PIXEL_METRICS = ("wasserstein", "js", "kl_fwd", "kl_rev", "euclidean", "auroc", "overlap_pct")


@dataclass(frozen=True, eq=False)
class Assessment:
    pred: LabelRaster
    segmap: SegmentMap
    stats: dict[str, StatRaster]
    table: SegmentStatTable
    norm: Optional[NormalizationSpec]
    result: ConfidenceResult
    refined: LabelRaster
    config: RunConfig

    @property
    def confidence(self) -> StatRaster:
        return self.result.pixel_conf


def assess(
    cube: ProbCube,
    features: Optional[FeatureCube] = None,
    excluded: Optional[np.ndarray] = None,
    config: RunConfig = RunConfig(),
    norm: Optional[NormalizationSpec] = None,
) -> Assessment:
    """Predict, segment, score and refine one scene.

    ``excluded`` marks nodata pixels; they get no prediction, no segment and
    no statistic. Without a given ``norm`` the normalizer is fitted on the
    scene's own valid pixels (no labels are used).
    """
    if excluded is None:
        excluded = np.zeros(cube.shape, dtype=bool)
    validate_alignment(cube, excluded)
    valid = ~excluded
    pred = predict(cube, excluded)
    segmap = inner_boundary_split(connected_components(pred, config.connectivity))

    if config.baseline == "softmax":
        conf = top_probability(cube, valid)
        stats = {"top_probability": conf}
        table = SegmentStatTable(segmap)
        norm = None
    else:
        stats = {
            "margin": margin(cube, valid),
            "neg_entropy": neg_entropy(cube, valid),
            "gradient": gradient_stat(cube, features, valid),
        }
        table = coverage(cube, segmap, config.eta)
        if norm is None:
            norm = fit_normalizer(stats, table, segmap=segmap)
        conf = combine(stats, table, segmap, norm)
        for stat in stats.values():
            if not stat.flags.get("omitted"):
                table = table.merge(aggregate(stat, segmap, config.agg, config.region))

    result = segment_confidence(conf, segmap, config.agg, config.region, config.tau)
    # the softmax baseline never abstains
    mode = "off" if config.baseline == "softmax" else config.refine_mode
    refined = refine(pred, result, mode)
    table.extra["segment_confidence"] = result.segment_conf
    table.extra["flag"] = np.where(result.incorrect, PREDICTED_INCORRECT, PREDICTED_CORRECT).astype(object)
    table.region_used.setdefault("segment_confidence", result.region_used)
    return Assessment(pred, segmap, stats, table, norm, result, refined, config)


@dataclass
class EvalReport:
    macro_iou: float
    per_class_iou: dict[int, float]
    macro_iou_unrefined: float
    pearson_r: Optional[float]
    wasserstein: Optional[float]
    js: Optional[float]
    kl_fwd: Optional[float]
    kl_rev: Optional[float]
    euclidean: Optional[float]
    auroc: Optional[float]
    overlap_pct: Optional[float]
    counts: dict[str, int]
    raw: dict[str, Optional[float]] = field(default_factory=dict)
    correlation_method: str = "pearson"
    n_segments: int = 0
    n_flagged: int = 0
    config: dict = field(default_factory=dict)
    schema_version: int = REPORT_SCHEMA_VERSION

    @property
    def undefined(self) -> list[str]:
        """Metrics that could not be computed on this scene."""
        return [k for k in ("pearson_r", *PIXEL_METRICS) if getattr(self, k) is None]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_iou"] = {str(k): v for k, v in self.per_class_iou.items()}
        d["undefined"] = self.undefined
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def segment_report(
    pred: LabelRaster,
    refined: LabelRaster,
    segmap: SegmentMap,
    segment_conf: np.ndarray,
    gt: LabelRaster,
    config: RunConfig = RunConfig(),
) -> dict:
    """IoU before/after refinement and the confidence-IoU correlation."""
    per_class, macro = ev.iou(refined, gt)
    _, macro_unrefined = ev.iou(pred, gt)
    seg_ious = ev.segment_iou(segmap, gt, config.seg_iou)
    try:
        r = ev.correlation(segment_conf, seg_ious, config.correlation)
    except DegenerateVariance:
        # e.g. a perfect prediction: every segment IoU is 1
        r = None
    return {
        "macro_iou": macro,
        "per_class_iou": per_class,
        "macro_iou_unrefined": macro_unrefined,
        "pearson_r": r,
        "correlation_method": config.correlation,
        "n_segments": int(segmap.n_segments),
        "n_flagged": int(np.sum(segment_conf < config.tau)),
    }


def pixel_report(
    conf: StatRaster, pred: LabelRaster, gt: LabelRaster, config: RunConfig = RunConfig()
) -> tuple[dict, ev.Histogram]:
    """Histogram separability metrics and AUROC of the pixel confidence.

    When every evaluated pixel is correct (or every one wrong) the metrics
    are undefined and come back as None.
    """
    hist = ev.build_histograms(conf, pred, gt, config.bins)
    try:
        metrics = ev.distribution_metrics(hist)
        metrics["auroc"] = ev.pixel_auroc(conf, pred, gt)
    except EmptyPopulation:
        metrics = dict.fromkeys(PIXEL_METRICS)
        metrics["raw"] = {"wasserstein": None, "euclidean": None}
    return metrics, hist


def pixel_counts(pred: LabelRaster, refined: LabelRaster, gt: LabelRaster) -> dict[str, int]:
    mask, correct = ev.correctness(pred, gt)
    return {
        "n_correct": int(correct.sum()),
        "n_incorrect": int((mask & ~correct).sum()),
        "n_abstained": int((refined.abstain_mask & gt.class_mask).sum()),
        "n_nodata": int(gt.nodata_mask.sum()),
    }


def build_report(seg: dict, pix: dict, counts: dict[str, int], config: RunConfig) -> EvalReport:
    return EvalReport(
        macro_iou=seg["macro_iou"],
        per_class_iou=seg["per_class_iou"],
        macro_iou_unrefined=seg["macro_iou_unrefined"],
        pearson_r=seg["pearson_r"],
        correlation_method=seg["correlation_method"],
        n_segments=seg["n_segments"],
        n_flagged=seg["n_flagged"],
        wasserstein=pix["wasserstein"],
        js=pix["js"],
        kl_fwd=pix["kl_fwd"],
        kl_rev=pix["kl_rev"],
        euclidean=pix["euclidean"],
        auroc=pix["auroc"],
        overlap_pct=pix["overlap_pct"],
        raw=pix["raw"],
        counts=counts,
        config=config.to_dict(),
    )


def evaluate(a: Assessment, gt: LabelRaster) -> tuple[EvalReport, ev.Histogram]:
    """Full report for an assessed scene against its ground truth.

    Pixel-level metrics score the unrefined prediction so that CAS and the
    softmax baseline are compared on the same pixel population.
    """
    seg = segment_report(a.pred, a.refined, a.segmap, a.result.segment_conf, gt, a.config)
    pix, hist = pixel_report(a.confidence, a.pred, gt, a.config)
    return build_report(seg, pix, pixel_counts(a.pred, a.refined, gt), a.config), hist
