"""Per-segment statistics: coverage of confident pixels and region aggregates."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .components import NODATA_ID, SegmentMap, inner_boundary_split
from .raster import ProbCube, StatRaster, validate_alignment

AGGREGATES = ("mean", "median")


@dataclass
class SegmentStatTable:
    """Column-oriented per-segment table; every array is indexed by segment id."""

    segmap: SegmentMap
    coverage: Optional[np.ndarray] = None
    eta: Optional[float] = None
    aggregates: dict[str, np.ndarray] = field(default_factory=dict)
    region_used: dict[str, np.ndarray] = field(default_factory=dict)
    n_pixels_used: dict[str, np.ndarray] = field(default_factory=dict)
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_segments(self) -> int:
        return self.segmap.n_segments

    def merge(self, other: "SegmentStatTable") -> "SegmentStatTable":
        out = SegmentStatTable(self.segmap, self.coverage, self.eta)
        for t in (self, other):
            if t.coverage is not None:
                out.coverage, out.eta = t.coverage, t.eta
            out.aggregates.update(t.aggregates)
            out.region_used.update(t.region_used)
            out.n_pixels_used.update(t.n_pixels_used)
            out.extra.update(t.extra)
        return out

    def columns(self) -> dict[str, list]:
        sm = self.segmap
        inner = sm.inner_sizes if sm.inner_sizes is not None else inner_boundary_split(sm).inner_sizes
        cols: dict[str, list] = {
            "id": list(range(self.n_segments)),
            "class": sm.segment_classes.tolist(),
            "size": sm.sizes.tolist(),
            "inner_size": inner.tolist(),
        }
        if self.coverage is not None:
            cols["coverage"] = self.coverage.tolist()
        for name, values in self.aggregates.items():
            cols[name] = values.tolist()
        for name, values in self.extra.items():
            cols[name] = values.tolist()
        if self.region_used:
            # one region per table in practice; report the first aggregate's
            first = next(iter(self.region_used.values()))
            cols["region_used"] = first.tolist()
        return cols

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = self.columns()
        names = list(cols)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names)
            for row in zip(*(cols[n] for n in names)):
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return path


def _flat_ids(segmap: SegmentMap, mask: np.ndarray) -> np.ndarray:
    return segmap.segment_ids[mask].astype(np.int64)


def coverage(
    cube: ProbCube, segmap: SegmentMap, eta: float = 0.9
) -> SegmentStatTable:
    """Fraction of each segment's pixels whose top probability exceeds ``eta``."""
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    validate_alignment(cube, segmap)
    valid = segmap.valid_mask
    ids = _flat_ids(segmap, valid)
    confident = cube.values.max(axis=-1)[valid] > eta
    hits = np.bincount(ids, weights=confident.astype(np.float64), minlength=segmap.n_segments)
    sizes = np.bincount(ids, minlength=segmap.n_segments)
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = hits / sizes
    return SegmentStatTable(segmap, coverage=cov, eta=eta)


def _grouped(ids: np.ndarray, values: np.ndarray, n: int, agg: str) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(ids, minlength=n)
    out = np.full(n, np.nan)
    if ids.size == 0:
        return out, counts
    order = np.lexsort((values, ids))
    v_sorted = values[order]
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    has = counts > 0
    if agg == "median":
        # lower-middle order statistic for even counts
        out[has] = v_sorted[starts[has] + (counts[has] - 1) // 2]
    else:
        sums = np.bincount(ids, weights=values, minlength=n)
        lo = v_sorted[starts[has]]
        hi = v_sorted[starts[has] + counts[has] - 1]
        out[has] = np.clip(sums[has] / counts[has], lo, hi)
    return out, counts


def aggregate(
    stat: StatRaster,
    segmap: SegmentMap,
    agg: str = "mean",
    region: str = "inner",
) -> SegmentStatTable:
    """Mean or median of ``stat`` over each segment's ``region`` ("whole" or "inner").

    Segments whose inner region is empty fall back to the whole segment, which
    is recorded in ``region_used``.
    """
    if agg not in AGGREGATES:
        raise ValueError(f"agg must be one of {AGGREGATES}, got {agg!r}")
    if region not in ("whole", "inner"):
        raise ValueError(f"region must be 'whole' or 'inner', got {region!r}")
    validate_alignment(stat, segmap)
    if segmap.inner_mask is None:
        segmap = inner_boundary_split(segmap)
    n = segmap.n_segments
    base = segmap.valid_mask & stat.valid_mask

    whole_vals, whole_n = _grouped(_flat_ids(segmap, base), stat.values[base], n, agg)
    used = np.full(n, "whole", dtype=object)
    if region == "whole":
        result, n_used = whole_vals, whole_n
    else:
        mask = base & segmap.inner_mask
        inner_vals, inner_n = _grouped(_flat_ids(segmap, mask), stat.values[mask], n, agg)
        use_inner = inner_n > 0
        result = np.where(use_inner, inner_vals, whole_vals)
        n_used = np.where(use_inner, inner_n, whole_n)
        used[use_inner] = "inner"

    name = f"{agg}_{stat.kind}"
    return SegmentStatTable(
        segmap,
        aggregates={name: result},
        region_used={name: used},
        n_pixels_used={name: n_used},
    )


def broadcast(segmap: SegmentMap, per_segment: np.ndarray) -> np.ndarray:
    """Paint a per-segment value onto every pixel of its segment (NaN elsewhere)."""
    out = np.full(segmap.shape, np.nan)
    valid = segmap.segment_ids != NODATA_ID
    out[valid] = np.asarray(per_segment, dtype=np.float64)[segmap.segment_ids[valid].astype(np.int64)]
    return out
