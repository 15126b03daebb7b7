"""Raster containers and the manifest + raw-binary file format.

A raster on disk is a JSON manifest next to a headerless little-endian
payload::

    {"dtype": "f32", "shape": [H, W, q], "layout": "row-major",
     "endianness": "little", "payload": "cube.bin",
     "classes": [...], "nodata": 255, "abstain": 254}

Probabilities are stored as float32 and widened to float64 on load; all
statistics downstream accumulate in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional

import numpy as np

from .errors import (
    ClassSetMismatch,
    DimensionMismatch,
    InvalidClassIndex,
    InvalidClassSet,
    MissingFile,
    NegativeProbability,
    NotADistribution,
    ShapeMismatch,
)

SUM_TOLERANCE = 1e-4

DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1"), "u32": np.dtype("<u4")}

WORLDCOVER_CLASSES = (
    "Tree cover",
    "Shrubland",
    "Grassland",
    "Cropland",
    "Built-up",
    "Bare / sparse vegetation",
    "Snow and ice",
    "Permanent water bodies",
    "Herbaceous wetland",
    "Mangroves",
    "Moss and lichen",
)

STAT_KINDS = ("margin", "neg_entropy", "gradient", "coverage", "confidence", "other")


@dataclass(frozen=True)
class ClassSet:
    """Ordered class names plus the two label sentinels."""

    names: tuple[str, ...]
    nodata_index: int = 255
    abstain_index: int = 254

    def __post_init__(self) -> None:
        object.__setattr__(self, "names", tuple(self.names))
        q = len(self.names)
        if q < 2:
            raise InvalidClassSet(f"need at least 2 classes, got {q}")
        if len(set(self.names)) != q:
            raise InvalidClassSet("class names must be unique")
        if self.nodata_index == self.abstain_index:
            raise InvalidClassSet("nodata and abstain sentinels must differ")
        for s in (self.nodata_index, self.abstain_index):
            if 0 <= s < q:
                raise InvalidClassSet(f"sentinel {s} collides with a class index")

    @property
    def count(self) -> int:
        return len(self.names)

    @classmethod
    def numbered(cls, q: int, **kw: Any) -> "ClassSet":
        return cls(tuple(f"class_{i}" for i in range(q)), **kw)

    @classmethod
    def worldcover(cls) -> "ClassSet":
        return cls(WORLDCOVER_CLASSES)


def _renormalize(values: np.ndarray) -> np.ndarray:
    if values.ndim != 3:
        raise ShapeMismatch(f"probability cube must be H x W x q, got shape {values.shape}")
    if values.size and not np.all(np.isfinite(values)):
        raise NotADistribution("probability cube contains non-finite values")
    if values.size and values.min() < 0:
        raise NegativeProbability(f"minimum probability {values.min():.3g} < 0")
    sums = values.sum(axis=-1, keepdims=True)
    dev = np.abs(sums - 1.0)
    if dev.size and dev.max() > SUM_TOLERANCE:
        r, c, _ = np.unravel_index(int(np.argmax(dev)), dev.shape)
        raise NotADistribution(
            f"pixel ({r}, {c}) sums to {float(sums[r, c, 0]):.6f}, tolerance {SUM_TOLERANCE}"
        )
    return values / sums


@dataclass(frozen=True, eq=False)
class ProbCube:
    """Per-pixel class probabilities, ``values[r, c, y]``, float64, rows sum to 1."""

    values: np.ndarray
    classes: ClassSet
    # exact on-disk bytes this cube was decoded from, kept for lossless re-save
    stored: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_array(cls, values: Any, classes: ClassSet) -> "ProbCube":
        arr = np.asarray(values)
        stored = arr if arr.dtype == np.float32 else None
        arr = _renormalize(arr.astype(np.float64))
        if arr.shape[2] != classes.count:
            raise ShapeMismatch(f"cube has {arr.shape[2]} classes, class set has {classes.count}")
        arr.setflags(write=False)
        return cls(arr, classes, stored)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    def as_float32(self) -> np.ndarray:
        if self.stored is not None:
            return self.stored
        return self.values.astype(np.float32)


@dataclass(frozen=True, eq=False)
class LabelRaster:
    """H x W class indices, with ``classes.nodata_index`` / ``classes.abstain_index`` sentinels."""

    values: np.ndarray
    classes: ClassSet

    @classmethod
    def from_array(cls, values: Any, classes: ClassSet) -> "LabelRaster":
        arr = np.asarray(values)
        if arr.ndim != 2:
            raise ShapeMismatch(f"label raster must be 2-D, got shape {arr.shape}")
        arr = arr.astype(np.int64)
        ok = (arr >= 0) & (arr < classes.count)
        ok |= (arr == classes.nodata_index) | (arr == classes.abstain_index)
        if not np.all(ok):
            bad = np.unique(arr[~ok])
            raise InvalidClassIndex(f"label values {bad.tolist()} are neither classes nor sentinels")
        if arr.size and (arr.max() > 255):
            raise InvalidClassIndex("label values must fit in an unsigned byte")
        out = arr.astype(np.uint8)
        out.setflags(write=False)
        return cls(out, classes)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def nodata_mask(self) -> np.ndarray:
        return self.values == self.classes.nodata_index

    @property
    def abstain_mask(self) -> np.ndarray:
        return self.values == self.classes.abstain_index

    @property
    def class_mask(self) -> np.ndarray:
        """Pixels carrying an actual class (neither sentinel)."""
        return self.values < self.classes.count

    def with_values(self, values: np.ndarray) -> "LabelRaster":
        return LabelRaster.from_array(values, self.classes)


@dataclass(frozen=True, eq=False)
class FeatureCube:
    """Penultimate-layer feature vectors, ``values[r, c, :]``."""

    values: np.ndarray

    @classmethod
    def from_array(cls, values: Any) -> "FeatureCube":
        arr = np.asarray(values)
        if arr.ndim != 3:
            raise ShapeMismatch(f"feature cube must be H x W x d, got shape {arr.shape}")
        arr = arr.astype(np.float64)
        if arr.size and not np.all(np.isfinite(arr)):
            raise ShapeMismatch("feature cube contains non-finite values")
        arr.setflags(write=False)
        return cls(arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @property
    def depth(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class StatRaster:
    """A scalar field over the image; invalid pixels hold NaN."""

    values: np.ndarray
    kind: str
    valid_mask: np.ndarray
    flags: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in STAT_KINDS:
            raise ValueError(f"unknown statistic kind {self.kind!r}")

    @classmethod
    def build(
        cls, values: np.ndarray, kind: str, valid_mask: Optional[np.ndarray] = None, **flags: Any
    ) -> "StatRaster":
        vals = np.array(values, dtype=np.float64)
        if valid_mask is None:
            valid_mask = np.isfinite(vals)
        mask = np.array(valid_mask, dtype=bool)
        vals[~mask] = np.nan
        vals.setflags(write=False)
        mask.setflags(write=False)
        return cls(vals, kind, mask, dict(flags))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


# --------------------------------------------------------------------------
# geometry helpers


def _shape_of(raster: Any) -> tuple[int, int]:
    if isinstance(raster, np.ndarray):
        return raster.shape[0], raster.shape[1]
    return raster.height, raster.width


def validate_alignment(a: Any, b: Any) -> None:
    """Raise unless ``a`` and ``b`` share H, W and (when both have one) the class set."""
    if _shape_of(a) != _shape_of(b):
        raise DimensionMismatch(f"raster shapes differ: {_shape_of(a)} vs {_shape_of(b)}")
    ca, cb = getattr(a, "classes", None), getattr(b, "classes", None)
    if ca is not None and cb is not None and ca != cb:
        raise ClassSetMismatch(f"class sets differ ({ca.count} vs {cb.count} classes)")


def iter_pixels(raster: Any) -> Iterator[tuple[int, int]]:
    """Yield ``(row, col)`` in row-major order."""
    h, w = _shape_of(raster)
    for r in range(h):
        for c in range(w):
            yield r, c


# --------------------------------------------------------------------------
# manifest + payload I/O


def _payload_path(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".bin")


def write_raster(
    manifest_path: str | Path,
    array: np.ndarray,
    dtype: str,
    classes: Optional[ClassSet] = None,
    extra: Optional[dict] = None,
) -> Path:
    """Write ``array`` as payload + manifest; returns the manifest path."""
    path = Path(manifest_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _payload_path(path)
    data = np.ascontiguousarray(array, dtype=DTYPES[dtype])
    manifest: dict[str, Any] = {
        "dtype": dtype,
        "shape": list(data.shape),
        "layout": "row-major",
        "endianness": "little",
        "payload": payload.name,
        "classes": list(classes.names) if classes is not None else [],
        "nodata": classes.nodata_index if classes is not None else 255,
        "abstain": classes.abstain_index if classes is not None else 254,
    }
    if extra:
        manifest.update(extra)
    payload.write_bytes(data.tobytes())
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_raster(manifest_path: str | Path) -> tuple[dict, np.ndarray]:
    """Decode a manifest and its payload into ``(manifest, array)``."""
    path = Path(manifest_path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ShapeMismatch(f"manifest {path} is not valid JSON: {exc}") from None
    for key in ("dtype", "shape", "layout", "endianness", "payload"):
        if key not in manifest:
            raise ShapeMismatch(f"manifest {path} lacks key {key!r}")
    if manifest["layout"] != "row-major" or manifest["endianness"] != "little":
        raise ShapeMismatch("only row-major little-endian payloads are supported")
    if manifest["dtype"] not in DTYPES:
        raise ShapeMismatch(f"unsupported dtype {manifest['dtype']!r}")
    payload = path.parent / manifest["payload"]
    if not payload.is_file():
        raise MissingFile(f"payload not found: {payload}")
    dtype = DTYPES[manifest["dtype"]]
    shape = tuple(int(s) for s in manifest["shape"])
    raw = payload.read_bytes()
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(raw) != expected:
        raise ShapeMismatch(f"payload {payload.name} has {len(raw)} bytes, manifest implies {expected}")
    return manifest, np.frombuffer(raw, dtype=dtype).reshape(shape)


def _classes_from_manifest(manifest: dict) -> ClassSet:
    return ClassSet(
        tuple(manifest.get("classes", ())),
        nodata_index=int(manifest.get("nodata", 255)),
        abstain_index=int(manifest.get("abstain", 254)),
    )


def load_cube(manifest_path: str | Path) -> ProbCube:
    manifest, arr = read_raster(manifest_path)
    if manifest["dtype"] != "f32" or arr.ndim != 3:
        raise ShapeMismatch("probability cube must be an f32 [H, W, q] raster")
    return ProbCube.from_array(arr, _classes_from_manifest(manifest))


def load_labels(manifest_path: str | Path, classes: Optional[ClassSet] = None) -> LabelRaster:
    manifest, arr = read_raster(manifest_path)
    if manifest["dtype"] != "u8" or arr.ndim != 2:
        raise ShapeMismatch("label raster must be a u8 [H, W] raster")
    declared = _classes_from_manifest(manifest) if manifest.get("classes") else None
    if classes is None:
        if declared is None:
            raise ClassSetMismatch("manifest declares no classes and none were given")
        classes = declared
    elif declared is not None and declared != classes:
        raise ClassSetMismatch("label manifest class set differs from the expected one")
    return LabelRaster.from_array(arr, classes)


def load_features(manifest_path: str | Path) -> FeatureCube:
    manifest, arr = read_raster(manifest_path)
    if manifest["dtype"] != "f32" or arr.ndim != 3:
        raise ShapeMismatch("feature cube must be an f32 [H, W, d] raster")
    return FeatureCube.from_array(arr)


def load_stat(manifest_path: str | Path) -> StatRaster:
    manifest, arr = read_raster(manifest_path)
    if manifest["dtype"] != "f32" or arr.ndim != 2:
        raise ShapeMismatch("statistic raster must be an f32 [H, W] raster")
    return StatRaster.build(arr, manifest.get("kind", "other"), **manifest.get("flags", {}))


def save_cube(cube: ProbCube, manifest_path: str | Path) -> Path:
    return write_raster(manifest_path, cube.as_float32(), "f32", cube.classes)


def save_labels(labels: LabelRaster, manifest_path: str | Path) -> Path:
    return write_raster(manifest_path, labels.values, "u8", labels.classes)


def save_features(features: FeatureCube, manifest_path: str | Path) -> Path:
    return write_raster(manifest_path, features.values, "f32")


def save_stat(stat: StatRaster, manifest_path: str | Path) -> Path:
    extra: dict[str, Any] = {"kind": stat.kind}
    if stat.flags:
        extra["flags"] = dict(sorted(stat.flags.items()))
    return write_raster(manifest_path, stat.values, "f32", None, extra)
