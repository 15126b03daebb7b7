"""Per-pixel statistics computed from a probability cube."""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import softmax, xlogy

from .errors import DimensionMismatch
from .raster import FeatureCube, LabelRaster, ProbCube, StatRaster, validate_alignment


def _valid(cube: ProbCube, valid: Optional[np.ndarray]) -> np.ndarray:
    if valid is None:
        return np.ones(cube.shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != cube.shape:
        raise DimensionMismatch(f"mask shape {valid.shape} != cube shape {cube.shape}")
    return valid


def probabilities_from_logits(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Softmax over the last axis of an H x W x q logit array."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return softmax(np.asarray(logits, dtype=np.float64) / temperature, axis=-1)


def predict(cube: ProbCube, excluded: Optional[np.ndarray] = None) -> LabelRaster:
    """Arg-max class per pixel; ties go to the lowest class index.

    Pixels flagged in ``excluded`` are written as nodata.
    """
    labels = np.argmax(cube.values, axis=-1)
    if excluded is not None:
        labels = np.where(_valid(cube, excluded), cube.classes.nodata_index, labels)
    return LabelRaster.from_array(labels, cube.classes)


def top_probability(cube: ProbCube, valid: Optional[np.ndarray] = None) -> StatRaster:
    """Winning-class probability, the plain softmax confidence."""
    return StatRaster.build(cube.values.max(axis=-1), "other", _valid(cube, valid))


def margin(cube: ProbCube, valid: Optional[np.ndarray] = None) -> StatRaster:
    """Top-1 minus top-2 class probability."""
    q = cube.values.shape[-1]
    top2 = np.partition(cube.values, q - 2, axis=-1)[..., -2:]
    return StatRaster.build(top2[..., 1] - top2[..., 0], "margin", _valid(cube, valid))


def neg_entropy(cube: ProbCube, valid: Optional[np.ndarray] = None) -> StatRaster:
    """``sum_y p log p`` (natural log), 0 for one-hot pixels, ``-log q`` for uniform ones."""
    p = cube.values
    return StatRaster.build(xlogy(p, p).sum(axis=-1), "neg_entropy", _valid(cube, valid))


def gradient_stat(
    cube: ProbCube,
    features: Optional[FeatureCube] = None,
    valid: Optional[np.ndarray] = None,
) -> StatRaster:
    """Frobenius norm of the probability-weighted last-layer gradient.

    With a final linear layer ``logits = W @ phi`` the gradient of logit ``y``
    w.r.t. ``W`` is the outer product ``e_y phi^T``. Weighting each class by
    ``w_y = p_y * (1 - onehot_y)`` and summing gives the rank-one matrix
    ``w phi^T``, whose Frobenius norm is ``||w||_2 * ||phi||_2``.

    Without features an all-zero raster is returned, flagged ``omitted=True``.
    """
    valid = _valid(cube, valid)
    if features is None:
        return StatRaster.build(np.zeros(cube.shape), "gradient", valid, omitted=True)
    validate_alignment(cube, features)
    p = cube.values
    pred = np.argmax(p, axis=-1)
    w = p.copy()
    np.put_along_axis(w, pred[..., None], 0.0, axis=-1)
    g = np.linalg.norm(w, axis=-1) * np.linalg.norm(features.values, axis=-1)
    return StatRaster.build(g, "gradient", valid, omitted=False)
