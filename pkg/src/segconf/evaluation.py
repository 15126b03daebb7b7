"""Segment-level and pixel-level evaluation of confidence values."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional
from xml.sax.saxutils import escape

import numpy as np
from scipy.stats import rankdata

from .components import NODATA_ID, SegmentMap, label_array
from .errors import DegenerateVariance, EmptyPopulation, NoValidPixels
from .raster import LabelRaster, StatRaster, validate_alignment

KL_EPS = 1e-12


# --------------------------------------------------------------------------
# segment level


def evaluated_mask(pred: LabelRaster, gt: LabelRaster) -> np.ndarray:
    """Pixels where both rasters carry a class (no nodata, no abstention)."""
    validate_alignment(pred, gt)
    return pred.class_mask & gt.class_mask


def iou(pred: LabelRaster, gt: LabelRaster) -> tuple[dict[int, float], float]:
    """Per-class IoU for the classes present in ``gt``, and their unweighted mean.

    Abstained and nodata pixels are dropped from both numerator and denominator.
    """
    mask = evaluated_mask(pred, gt)
    if not mask.any():
        raise NoValidPixels("no pixel carries a class in both prediction and ground truth")
    q = gt.classes.count
    p = pred.values[mask].astype(np.int64)
    g = gt.values[mask].astype(np.int64)
    inter = np.bincount(g[p == g], minlength=q)
    union = np.bincount(p, minlength=q) + np.bincount(g, minlength=q) - inter
    present = np.bincount(g, minlength=q) > 0
    per_class = {int(c): float(inter[c] / union[c]) for c in np.flatnonzero(present)}
    return per_class, float(np.mean(list(per_class.values())))


def segment_iou(segmap: SegmentMap, gt: LabelRaster, mode: str = "adjusted") -> np.ndarray:
    """IoU of each predicted segment against the ground truth.

    ``adjusted``: TP are segment pixels whose ground truth matches the segment
    class, FP the rest of the segment, FN the pixels of every same-class
    ground-truth component touching the segment that fall outside it.
    ``accuracy``: plain TP / segment size.
    """
    validate_alignment(segmap, gt)
    n = segmap.n_segments
    ids = segmap.segment_ids
    seg_valid = ids != NODATA_ID
    seg_of = ids.astype(np.int64)
    gtv = gt.values.astype(np.int64)
    seg_class = np.full(ids.shape, -1, dtype=np.int64)
    seg_class[seg_valid] = segmap.segment_classes[seg_of[seg_valid]]
    match = seg_valid & (gtv == seg_class)
    tp = np.bincount(seg_of[match], minlength=n).astype(np.float64)
    size = segmap.sizes.astype(np.float64)
    if mode == "accuracy":
        return tp / size
    if mode != "adjusted":
        raise ValueError(f"mode must be 'adjusted' or 'accuracy', got {mode!r}")
    gt_cc = label_array(gt.values, ~gt.class_mask, segmap.connectivity)
    comp = gt_cc.segment_ids.astype(np.int64)
    # (segment, gt component) overlaps restricted to matching class
    key = seg_of[match] * gt_cc.n_segments + comp[match]
    pairs, overlap = np.unique(key, return_counts=True)
    seg_idx = pairs // max(gt_cc.n_segments, 1)
    comp_idx = pairs % max(gt_cc.n_segments, 1)
    outside = gt_cc.sizes[comp_idx] - overlap
    fn = np.bincount(seg_idx, weights=outside.astype(np.float64), minlength=n)
    return tp / (size + fn)


def correlation(x: np.ndarray, y: np.ndarray, method: str = "pearson") -> float:
    """Sample Pearson (or Spearman) correlation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    if x.size < 2:
        raise DegenerateVariance(f"need at least 2 segments, got {x.size}")
    if method == "spearman":
        x, y = rankdata(x), rankdata(y)
    elif method != "pearson":
        raise ValueError(f"method must be 'pearson' or 'spearman', got {method!r}")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateVariance("one of the series is constant")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


# --------------------------------------------------------------------------
# pixel level


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    counts_correct: np.ndarray
    counts_incorrect: np.ndarray

    @property
    def bin_count(self) -> int:
        return len(self.counts_correct)

    @staticmethod
    def _density(counts: np.ndarray) -> np.ndarray:
        total = counts.sum()
        return counts / total if total > 0 else np.zeros(len(counts))

    @property
    def density_correct(self) -> np.ndarray:
        return self._density(self.counts_correct)

    @property
    def density_incorrect(self) -> np.ndarray:
        return self._density(self.counts_incorrect)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        dc, di = self.density_correct, self.density_incorrect
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count_correct", "count_incorrect",
                        "density_correct", "density_incorrect"])
            for i in range(self.bin_count):
                w.writerow([repr(float(self.edges[i])), repr(float(self.edges[i + 1])),
                            int(self.counts_correct[i]), int(self.counts_incorrect[i]),
                            repr(float(dc[i])), repr(float(di[i]))])
        return path


def correctness(pred: LabelRaster, gt: LabelRaster) -> tuple[np.ndarray, np.ndarray]:
    """``(evaluated, correct)`` pixel masks."""
    mask = evaluated_mask(pred, gt)
    return mask, mask & (pred.values == gt.values)


def bin_edges(bins: int) -> np.ndarray:
    return np.arange(bins + 1) / bins


def bin_index(values: np.ndarray, bins: int) -> np.ndarray:
    """Uniform bins on [0, 1]; the last bin is closed on the right."""
    edges = bin_edges(bins)
    return np.clip(np.searchsorted(edges, values, side="right") - 1, 0, bins - 1)


def build_histograms(conf: StatRaster, pred: LabelRaster, gt: LabelRaster, bins: int = 100) -> Histogram:
    if bins < 2:
        raise ValueError("need at least 2 bins")
    validate_alignment(conf, pred)
    mask, correct = correctness(pred, gt)
    mask &= conf.valid_mask
    if not mask.any():
        raise NoValidPixels("no evaluated pixel has a confidence value")
    idx = bin_index(conf.values[mask], bins)
    ok = correct[mask]
    return Histogram(
        edges=bin_edges(bins),
        counts_correct=np.bincount(idx[ok], minlength=bins),
        counts_incorrect=np.bincount(idx[~ok], minlength=bins),
    )


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _smooth(p: np.ndarray) -> np.ndarray:
    p = p + KL_EPS
    return p / p.sum()


def _distances(p: np.ndarray, q: np.ndarray, width: float) -> dict[str, float]:
    ps, qs = _smooth(p), _smooth(q)
    m = 0.5 * (ps + qs)
    return {
        "wasserstein": float(np.sum(np.abs(np.cumsum(p) - np.cumsum(q))) * width),
        "kl_fwd": _kl(ps, qs),
        "kl_rev": _kl(qs, ps),
        "js": 0.5 * _kl(ps, m) + 0.5 * _kl(qs, m),
        "overlap_pct": 100.0 * float(np.sum(np.minimum(p, q))),
        "euclidean": float(np.linalg.norm(p - q)),
    }


def distribution_metrics(h: Histogram) -> dict[str, float]:
    """Distances between the correct (p) and incorrect (q) confidence densities.

    A ``raw`` sub-dict repeats the scale-dependent distances on bin counts.
    """
    if h.counts_correct.sum() == 0 or h.counts_incorrect.sum() == 0:
        raise EmptyPopulation("both correct and incorrect pixels are required")
    width = 1.0 / h.bin_count
    out: dict = _distances(h.density_correct, h.density_incorrect, width)
    cc, ci = h.counts_correct.astype(np.float64), h.counts_incorrect.astype(np.float64)
    out["raw"] = {
        "wasserstein": float(np.sum(np.abs(np.cumsum(cc) - np.cumsum(ci))) * width),
        "euclidean": float(np.linalg.norm(cc - ci)),
    }
    return out


def auroc(scores: np.ndarray, positive: np.ndarray, valid: Optional[np.ndarray] = None) -> float:
    """P(score of a random positive > score of a random negative), ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    if valid is not None:
        scores, positive = scores[valid], positive[valid]
    else:
        scores, positive = scores.ravel(), positive.ravel()
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EmptyPopulation("AUROC needs both positive and negative pixels")
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pixel_auroc(conf: StatRaster, pred: LabelRaster, gt: LabelRaster) -> float:
    mask, correct = correctness(pred, gt)
    mask &= conf.valid_mask
    return auroc(conf.values, correct, mask)


# --------------------------------------------------------------------------
# figures


def histogram_svg(h: Histogram, title: str = "confidence", width: int = 640, height: int = 360) -> str:
    """Overlaid density bars for correct (green) and incorrect (red) pixels."""
    pad_l, pad_r, pad_t, pad_b = 56, 16, 32, 44
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b
    dc, di = h.density_correct, h.density_incorrect
    top = max(float(dc.max(initial=0)), float(di.max(initial=0)), 1e-12)
    bw = pw / h.bin_count
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]
    for dens, colour in ((dc, "#2a9d3f"), (di, "#d62728")):
        for i, d in enumerate(dens):
            if d <= 0:
                continue
            bh = ph * float(d) / top
            parts.append(
                f'<rect x="{pad_l + i * bw:.2f}" y="{pad_t + ph - bh:.2f}" width="{bw:.2f}" '
                f'height="{bh:.2f}" fill="{colour}" fill-opacity="0.55"/>'
            )
    x0, y0 = pad_l, pad_t + ph
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}" stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{pad_t}" x2="{x0}" y2="{y0}" stroke="black"/>')
    for k in range(6):
        t = k / 5
        x = x0 + t * pw
        parts.append(f'<line x1="{x:.1f}" y1="{y0}" x2="{x:.1f}" y2="{y0 + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{y0 + 16}" text-anchor="middle">{t:.1f}</text>')
    parts.append(f'<text x="{x0 + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">confidence</text>')
    parts.append(
        f'<text x="14" y="{pad_t + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {pad_t + ph / 2:.1f})">density</text>'
    )
    lx = x0 + pw - 150
    for j, (label, colour) in enumerate((("correct", "#2a9d3f"), ("misclassified", "#d62728"))):
        y = pad_t + 6 + 16 * j
        parts.append(f'<rect x="{lx}" y="{y}" width="10" height="10" fill="{colour}" fill-opacity="0.55"/>')
        parts.append(f'<text x="{lx + 16}" y="{y + 9}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
