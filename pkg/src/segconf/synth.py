"""Deterministic synthetic scenes: Voronoi ground truth plus a simulated model output.

Randomness comes from numpy's Philox4x64 counter-based generator seeded with
``SceneSpec.seed``; the draw order below is fixed, so a spec always yields
the same bytes for a given numpy version.

Generation steps:

1. ground truth: ``n_seeds`` uniform sites, each with a uniform class;
   every pixel takes the class of its nearest site (ties: lowest site).
2. errors: ``round(error_rate * n_valid)`` pixels are mislabeled. A share
   ``SPILL_FRACTION`` spills over cell borders: pixels close to the border
   with the second-nearest site take that site's class, so the neighbouring
   segment grows into the cell. The rest are interior blobs, ranked by
   smooth noise, per-site difficulty, a bonus for confusion-pair classes and
   distance from the border, and relabeled to the confusion partner when the
   class has one, else to a per-site wrong class.
3. probabilities: logits with a per-pixel gap between the predicted class
   and the runner-up (the true class for errors); with
   ``informative_confidence`` the gap is smaller for erroneous pixels and in
   difficult cells, plus smooth and white jitter.
4. features: random directions with log-normal norms.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import RunConfig
from .errors import InvalidSpec
from .raster import ClassSet, FeatureCube, LabelRaster, ProbCube

DEFAULT_CONFUSION = ((2, 3), (0, 1), (8, 2))

# simulated model behaviour (logit-gap units)
GAP_CORRECT = 3.5
GAP_DIFFICULTY = 1.5
GAP_ERROR = 0.5
GAP_UNINFORMATIVE = 2.4
JITTER_SMOOTH = 0.3
JITTER_WHITE = 1.2
JITTER_SCALE = 1.5
# share of erroneous pixels placed as boundary spill-over
SPILL_FRACTION = 0.8
# weight of the noise term against border distance when shaping spill bands
SPILL_NOISE = 0.5
# weight of per-site difficulty when placing interior errors
ERROR_DIFFICULTY = 0.5


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    height: int = 256
    width: int = 256
    q: int = 11
    n_seeds: int = 48
    error_rate: float = 0.2
    # None: the built-in pairs whose classes exist for this q
    confusion_pairs: Optional[tuple[tuple[int, int], ...]] = None
    sharpness: float = 1.0
    informative_confidence: bool = True
    feature_depth: int = 8
    nodata_rate: float = 0.0

    def __post_init__(self) -> None:
        pairs = self.confusion_pairs
        if pairs is None:
            pairs = tuple(p for p in DEFAULT_CONFUSION if max(p) < self.q)
        object.__setattr__(self, "confusion_pairs", tuple((int(a), int(b)) for a, b in pairs))
        self.validate()

    def validate(self) -> None:
        checks = [
            (0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer"),
            (self.height >= 1 and self.width >= 1, "height and width must be positive"),
            (self.q >= 2, "q must be at least 2"),
            (self.q <= 250, "q must leave room for the u8 sentinels"),
            (self.n_seeds >= 1, "n_seeds must be positive"),
            (0.0 <= self.error_rate <= 1.0, "error_rate must lie in [0, 1]"),
            (self.sharpness > 0, "sharpness must be positive"),
            (self.feature_depth >= 1, "feature_depth must be positive"),
            (0.0 <= self.nodata_rate < 1.0, "nodata_rate must lie in [0, 1)"),
        ]
        for a, b in self.confusion_pairs:
            checks.append((0 <= a < self.q and 0 <= b < self.q and a != b, f"bad confusion pair ({a}, {b})"))
        for ok, msg in checks:
            if not ok:
                raise InvalidSpec(msg)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion_pairs"] = [list(p) for p in self.confusion_pairs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if "confusion_pairs" in d:
            d["confusion_pairs"] = tuple(tuple(p) for p in d["confusion_pairs"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from None


@dataclass(frozen=True, eq=False)
class Scene:
    spec: SceneSpec
    gt: LabelRaster
    cube: ProbCube
    features: FeatureCube
    error_mask: np.ndarray = field(repr=False)


def _unit_noise(rng: np.random.Generator, shape: tuple[int, int], sigma: float) -> np.ndarray:
    noise = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    sd = noise.std()
    return (noise - noise.mean()) / sd if sd > 0 else noise


def _nearest_sites(sites: np.ndarray, h: int, w: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest and second-nearest site per pixel, and the distance gap between them."""
    nearest = np.empty((h, w), dtype=np.int64)
    second = np.empty((h, w), dtype=np.int64)
    gap = np.full((h, w), np.inf)
    cols = np.arange(w) + 0.5
    for r0 in range(0, h, 32):
        rows = np.arange(r0, min(h, r0 + 32)) + 0.5
        sl = slice(r0, r0 + len(rows))
        d = (rows[:, None, None] - sites[None, None, :, 0]) ** 2 + (cols[None, :, None] - sites[None, None, :, 1]) ** 2
        order = np.argsort(d, axis=-1, kind="stable")
        nearest[sl] = order[..., 0]
        if sites.shape[0] > 1:
            second[sl] = order[..., 1]
            two = np.sqrt(np.take_along_axis(d, order[..., :2], axis=-1))
            gap[sl] = two[..., 1] - two[..., 0]
        else:
            second[sl] = order[..., 0]
    return nearest, second, gap


def generate(spec: SceneSpec) -> Scene:
    """Build ground truth, probability cube and feature cube for ``spec``."""
    spec.validate()
    h, w, q = spec.height, spec.width, spec.q
    rng = np.random.Generator(np.random.Philox(spec.seed))
    classes = ClassSet.numbered(q)

    sites = rng.random((spec.n_seeds, 2)) * np.array([h, w])
    site_class = rng.integers(0, q, spec.n_seeds)
    site_difficulty = rng.random(spec.n_seeds)
    site_wrong = (site_class + 1 + rng.integers(0, q - 1, spec.n_seeds)) % q
    nearest, second, gap = _nearest_sites(sites, h, w)
    gt = site_class[nearest]

    scale = max(2.0, min(h, w) / 64)
    nodata = np.zeros((h, w), dtype=bool)
    blob = _unit_noise(rng, (h, w), 4 * scale)
    if spec.nodata_rate > 0:
        k = int(round(spec.nodata_rate * h * w))
        order = np.argsort(-blob, axis=None, kind="stable")
        nodata.ravel()[order[:k]] = True

    partner = np.full(q, -1, dtype=np.int64)
    for a, b in spec.confusion_pairs:
        if partner[a] < 0:
            partner[a] = b
        if partner[b] < 0:
            partner[b] = a

    # boundary spill: the neighbouring cell's class leaks across the border
    neighbour = site_class[second]
    n_valid = int((~nodata).sum())
    n_err = int(round(spec.error_rate * n_valid))
    n_spill = int(round(SPILL_FRACTION * n_err))
    spill_score = -gap / scale + SPILL_NOISE * _unit_noise(rng, (h, w), 2 * scale) + site_difficulty[nearest]
    spill_score = np.where(nodata | (neighbour == gt), -np.inf, spill_score)
    order = np.argsort(-spill_score, axis=None, kind="stable")
    n_spill = min(n_spill, int(np.isfinite(spill_score).sum()))
    spill = np.zeros((h, w), dtype=bool)
    spill.ravel()[order[:n_spill]] = True

    # interior blobs, preferring difficult cells, confusion-pair classes and cell interiors
    interior = np.minimum(gap / (6 * scale), 1.0)
    score = (
        _unit_noise(rng, (h, w), 1.5 * scale)
        + ERROR_DIFFICULTY * site_difficulty[nearest]
        + 1.0 * (partner[gt] >= 0)
        + 0.5 * interior
    )
    score = np.where(nodata | spill, -np.inf, score)
    order = np.argsort(-score, axis=None, kind="stable")
    errors = spill.copy()
    errors.ravel()[order[: n_err - n_spill]] = True
    wrong = np.where(partner[gt] >= 0, partner[gt], site_wrong[nearest])
    pred = np.where(spill, neighbour, np.where(errors, wrong, gt))

    # logit gap between predicted class and runner-up
    smooth = _unit_noise(rng, (h, w), scale)
    white = rng.standard_normal((h, w))
    jitter = JITTER_SMOOTH * smooth + JITTER_WHITE * white
    if spec.informative_confidence:
        mu = np.where(errors, GAP_ERROR, GAP_CORRECT - GAP_DIFFICULTY * site_difficulty[nearest])
    else:
        mu = np.full((h, w), GAP_UNINFORMATIVE)
    gap_logit = np.maximum(spec.sharpness * (mu + JITTER_SCALE * jitter), 0.05)

    logits = 0.5 * rng.standard_normal((h, w, q))
    # runner-up: the true class for errors, the confusion partner or a random class otherwise
    random_other = (pred + 1 + rng.integers(0, q - 1, (h, w))) % q
    runner = np.where(errors, gt, np.where(partner[pred] >= 0, partner[pred], random_other))
    rows, cols = np.indices((h, w))
    others = logits.copy()
    others[rows, cols, pred] = -np.inf
    top_other = others.max(axis=-1)
    logits[rows, cols, runner] = top_other + 0.25
    logits[rows, cols, pred] = top_other + 0.25 + gap_logit
    z = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    cube = ProbCube.from_array(p.astype(np.float32), classes)

    direction = rng.standard_normal((h, w, spec.feature_depth))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    norms = np.exp(0.25 * rng.standard_normal((h, w)))
    features = FeatureCube.from_array((direction * norms[..., None]).astype(np.float32))

    gt_labels = LabelRaster.from_array(np.where(nodata, classes.nodata_index, gt), classes)
    errors &= ~nodata
    errors.setflags(write=False)
    return Scene(spec, gt_labels, cube, features, errors)


def sweep(
    scenes: Sequence[SceneSpec],
    configs: Sequence[RunConfig],
) -> list[dict]:
    """Evaluate every (scene, config) pair; rows come out scene-major."""
    from .pipeline import assess, evaluate

    if not scenes or not configs:
        raise InvalidSpec("sweep needs at least one scene and one config")
    rows = []
    for spec in scenes:
        scene = generate(spec)
        for cfg in configs:
            a = assess(scene.cube, scene.features, scene.gt.nodata_mask, cfg)
            report, _ = evaluate(a, scene.gt)
            rows.append({"scene": spec.to_dict(), "config": cfg.to_dict(), "report": report.to_dict()})
    return rows


def config_grid(base: RunConfig = RunConfig(), **axes: Iterable) -> list[RunConfig]:
    """Cartesian product of config overrides, e.g. ``config_grid(eta=[0.7, 0.8, 0.9])``."""
    names = list(axes)
    return [replace(base, **dict(zip(names, combo))) for combo in itertools.product(*axes.values())]
