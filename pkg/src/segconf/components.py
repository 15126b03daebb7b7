"""Connected-component labeling of predicted label rasters.

Two-pass union-find with path halving. Large rasters are cut into
horizontal strips that are labeled concurrently (the kernels release the
GIL); strip seams are merged afterwards and final ids are handed out in
row-major first-encounter order, so the result does not depend on the
number of strips.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numba
import numpy as np

from .errors import ShapeMismatch, UnknownSegment
from .raster import LabelRaster, read_raster, write_raster

NODATA_ID = np.uint32(0xFFFFFFFF)

REGIONS = ("whole", "inner", "boundary")


def worker_count() -> int:
    """Thread cap from ``SEGCONF_THREADS`` (default 1)."""
    try:
        n = int(os.environ.get("SEGCONF_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


@dataclass(frozen=True)
class SegmentRecord:
    id: int
    class_index: int
    size: int
    inner_size: int
    # half-open: rows row0..row1-1, cols col0..col1-1
    bounding_box: tuple[int, int, int, int]


@dataclass(frozen=True, eq=False)
class SegmentMap:
    """Connected components of a label raster.

    ``segment_ids`` holds a dense id per pixel (``NODATA_ID`` for excluded
    pixels). Per-segment arrays ``segment_classes``/``sizes``/``bboxes`` are indexed
    by id. ``inner_mask`` is only set once :func:`inner_boundary_split` ran.
    """

    segment_ids: np.ndarray
    segment_classes: np.ndarray
    sizes: np.ndarray
    bboxes: np.ndarray
    connectivity: int = 4
    inner_mask: Optional[np.ndarray] = None
    inner_sizes: Optional[np.ndarray] = None

    @property
    def height(self) -> int:
        return self.segment_ids.shape[0]

    @property
    def width(self) -> int:
        return self.segment_ids.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.segment_ids.shape

    @property
    def n_segments(self) -> int:
        return len(self.sizes)

    @property
    def valid_mask(self) -> np.ndarray:
        return self.segment_ids != NODATA_ID

    @property
    def segments(self) -> list[SegmentRecord]:
        inner = self.inner_sizes if self.inner_sizes is not None else np.zeros_like(self.sizes)
        return [
            SegmentRecord(
                id=i,
                class_index=int(self.segment_classes[i]),
                size=int(self.sizes[i]),
                inner_size=int(inner[i]),
                bounding_box=tuple(int(v) for v in self.bboxes[i]),
            )
            for i in range(self.n_segments)
        ]


# --------------------------------------------------------------------------
# kernels


@numba.njit(cache=True, nogil=True, inline="always")
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@numba.njit(cache=True, nogil=True, inline="always")
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra < rb:
        parent[rb] = ra
        return ra
    if rb < ra:
        parent[ra] = rb
    return rb


@numba.njit(cache=True, nogil=True)
def _label_strip(cls, r0, r1, eight, labels, parent):
    """First pass over rows r0..r1-1; provisional labels are flat pixel indices."""
    w = cls.shape[1]
    for r in range(r0, r1):
        for c in range(w):
            v = cls[r, c]
            p = r * w + c
            if v < 0:
                labels[p] = -1
                continue
            parent[p] = p
            cur = -1
            if c > 0 and cls[r, c - 1] == v:
                cur = _find(parent, labels[p - 1])
            if r > r0:
                if cls[r - 1, c] == v:
                    n = labels[p - w]
                    cur = n if cur < 0 else _union(parent, cur, n)
                if eight:
                    if c > 0 and cls[r - 1, c - 1] == v:
                        n = labels[p - w - 1]
                        cur = n if cur < 0 else _union(parent, cur, n)
                    if c + 1 < w and cls[r - 1, c + 1] == v:
                        n = labels[p - w + 1]
                        cur = n if cur < 0 else _union(parent, cur, n)
            if cur < 0:
                labels[p] = p
            else:
                labels[p] = _find(parent, cur)
                parent[p] = labels[p]


@numba.njit(cache=True, nogil=True)
def _merge_seam(cls, r, eight, labels, parent):
    """Union components across the seam between rows r-1 and r."""
    w = cls.shape[1]
    for c in range(w):
        v = cls[r, c]
        if v < 0:
            continue
        p = r * w + c
        if cls[r - 1, c] == v:
            _union(parent, labels[p], labels[p - w])
        if eight:
            if c > 0 and cls[r - 1, c - 1] == v:
                _union(parent, labels[p], labels[p - w - 1])
            if c + 1 < w and cls[r - 1, c + 1] == v:
                _union(parent, labels[p], labels[p - w + 1])


@numba.njit(cache=True, nogil=True)
def _relabel(cls, labels, parent, ids, seg_class, seg_size, seg_bbox):
    """Second pass: dense ids in first-encounter order plus per-segment tallies."""
    h, w = cls.shape
    remap = np.full(h * w, -1, dtype=np.int64)
    n = 0
    for r in range(h):
        for c in range(w):
            p = r * w + c
            if cls[r, c] < 0:
                ids[r, c] = 0xFFFFFFFF
                continue
            root = _find(parent, labels[p])
            k = remap[root]
            if k < 0:
                k = n
                remap[root] = k
                n += 1
                seg_class[k] = cls[r, c]
                seg_bbox[k, 0] = r
                seg_bbox[k, 1] = c
                seg_bbox[k, 2] = r + 1
                seg_bbox[k, 3] = c + 1
            ids[r, c] = k
            seg_size[k] += 1
            if c < seg_bbox[k, 1]:
                seg_bbox[k, 1] = c
            if c + 1 > seg_bbox[k, 3]:
                seg_bbox[k, 3] = c + 1
            seg_bbox[k, 2] = r + 1
    return n


def _strips(h: int, n: int) -> list[tuple[int, int]]:
    n = max(1, min(n, h))
    bounds = np.linspace(0, h, n + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _label_array(cls: np.ndarray, connectivity: int, threads: int) -> SegmentMap:
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    h, w = cls.shape
    eight = connectivity == 8
    labels = np.empty(h * w, dtype=np.int64)
    parent = np.empty(h * w, dtype=np.int64)
    strips = _strips(h, threads)
    if len(strips) > 1:
        with ThreadPoolExecutor(len(strips)) as pool:
            list(pool.map(lambda s: _label_strip(cls, s[0], s[1], eight, labels, parent), strips))
        for r0, _ in strips[1:]:
            _merge_seam(cls, r0, eight, labels, parent)
    elif strips:
        _label_strip(cls, 0, h, eight, labels, parent)
    ids = np.empty((h, w), dtype=np.uint32)
    seg_class = np.zeros(h * w, dtype=np.int64)
    seg_size = np.zeros(h * w, dtype=np.int64)
    seg_bbox = np.zeros((h * w, 4), dtype=np.int64)
    n = _relabel(cls, labels, parent, ids, seg_class, seg_size, seg_bbox)
    return SegmentMap(
        segment_ids=ids,
        segment_classes=seg_class[:n].copy(),
        sizes=seg_size[:n].copy(),
        bboxes=seg_bbox[:n].copy(),
        connectivity=connectivity,
    )


def label_array(values: np.ndarray, excluded: np.ndarray, connectivity: int = 4) -> SegmentMap:
    """Label a plain integer array; pixels where ``excluded`` is true get ``NODATA_ID``."""
    cls = np.asarray(values, dtype=np.int64).copy()
    cls[np.asarray(excluded, dtype=bool)] = -1
    return _label_array(np.ascontiguousarray(cls), connectivity, worker_count())


def connected_components(labels: LabelRaster, connectivity: int = 4) -> SegmentMap:
    """Segment ``labels`` into same-class connected components.

    Nodata and abstain pixels belong to no segment.
    """
    return label_array(labels.values, ~labels.class_mask, connectivity)


def inner_boundary_split(segmap: SegmentMap) -> SegmentMap:
    """Populate the inner mask: pixels whose four neighbours all lie in the same segment.

    Pixels on the image border are always boundary.
    """
    ids = segmap.segment_ids
    h, w = ids.shape
    inner = np.zeros((h, w), dtype=bool)
    if h > 2 and w > 2:
        core = ids[1:-1, 1:-1]
        inner[1:-1, 1:-1] = (
            (core != NODATA_ID)
            & (ids[:-2, 1:-1] == core)
            & (ids[2:, 1:-1] == core)
            & (ids[1:-1, :-2] == core)
            & (ids[1:-1, 2:] == core)
        )
    inner_sizes = np.bincount(ids[inner].astype(np.int64), minlength=segmap.n_segments)
    inner.setflags(write=False)
    return replace(segmap, inner_mask=inner, inner_sizes=inner_sizes[: segmap.n_segments])


def region_mask(segmap: SegmentMap, region: str) -> np.ndarray:
    """Pixel mask of ``region`` ("whole", "inner" or "boundary") across all segments."""
    if region not in REGIONS:
        raise ValueError(f"region must be one of {REGIONS}, got {region!r}")
    valid = segmap.valid_mask
    if region == "whole":
        return valid
    if segmap.inner_mask is None:
        segmap = inner_boundary_split(segmap)
    if region == "inner":
        return segmap.inner_mask
    return valid & ~segmap.inner_mask


def segment_pixels(segmap: SegmentMap, id: int, region: str = "whole") -> list[tuple[int, int]]:
    """Row-major coordinates of one segment's ``region``."""
    if not 0 <= id < segmap.n_segments:
        raise UnknownSegment(f"segment {id} not in 0..{segmap.n_segments - 1}")
    r0, c0, r1, c1 = (int(v) for v in segmap.bboxes[id])
    window = segmap.segment_ids[r0:r1, c0:c1] == id
    if region != "whole":
        window &= region_mask(segmap, region)[r0:r1, c0:c1]
    rows, cols = np.nonzero(window)
    return [(int(r) + r0, int(c) + c0) for r, c in zip(rows, cols)]


def save_segments(segmap: SegmentMap, manifest_path: str | Path) -> tuple[Path, Path]:
    """Write the id raster (u32) and a JSON segment table next to it."""
    path = write_raster(
        manifest_path,
        segmap.segment_ids,
        "u32",
        extra={"nodata": int(NODATA_ID), "connectivity": segmap.connectivity},
    )
    table = Path(manifest_path).with_suffix(".table.json")
    rows = [
        {
            "id": s.id,
            "class": s.class_index,
            "size": s.size,
            "inner_size": s.inner_size,
            "bbox": list(s.bounding_box),
        }
        for s in segmap.segments
    ]
    table.write_text(json.dumps({"schema_version": 1, "segments": rows}, indent=1) + "\n")
    return path, table


def load_segments(manifest_path: str | Path) -> SegmentMap:
    """Read a segment map written by :func:`save_segments` (inner mask recomputed)."""
    manifest, ids = read_raster(manifest_path)
    if manifest["dtype"] != "u32" or ids.ndim != 2:
        raise ShapeMismatch("segment map must be a u32 [H, W] raster")
    table = json.loads(Path(manifest_path).with_suffix(".table.json").read_text())["segments"]
    segmap = SegmentMap(
        segment_ids=ids.copy(),
        segment_classes=np.array([s["class"] for s in table], dtype=np.int64),
        sizes=np.array([s["size"] for s in table], dtype=np.int64),
        bboxes=np.array([s["bbox"] for s in table], dtype=np.int64).reshape(-1, 4),
        connectivity=int(manifest.get("connectivity", 4)),
    )
    return inner_boundary_split(segmap)
