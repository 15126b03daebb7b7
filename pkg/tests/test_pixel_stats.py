import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from segconf.errors import DimensionMismatch
from segconf.pixel_stats import (
    gradient_stat,
    margin,
    neg_entropy,
    predict,
    probabilities_from_logits,
    top_probability,
)
from segconf.raster import ClassSet, FeatureCube, ProbCube

from conftest import random_cube
from oracles import dense_gradient_norm


def _cube(rows):
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, None, :]
    return ProbCube.from_array(arr, ClassSet.numbered(arr.shape[-1]))


@pytest.mark.parametrize("p,expected", [
    ([0.1, 0.7, 0.2], 1),
    ([0.5, 0.5, 0.0], 0),
    ([1 / 11] * 11, 0),
])
def test_predict(p, expected):
    assert predict(_cube(p)).values[0, 0] == expected


def test_predict_excluded_is_nodata():
    cube = _cube(np.full((1, 2, 3), 1 / 3))
    out = predict(cube, np.array([[False, True]]))
    assert out.values.tolist() == [[0, 255]]


@pytest.mark.parametrize("p,expected", [
    ([0.0, 1.0, 0.0], 1.0),
    ([1 / 3] * 3, 0.0),
    ([0.7, 0.2, 0.1], 0.5),
])
def test_margin(p, expected):
    assert margin(_cube(p)).values[0, 0] == pytest.approx(expected, abs=1e-15)


def test_margin_one_hot_exact():
    cube = _cube(np.eye(11)[None, :, :])
    assert (margin(cube).values == 1.0).all()


def test_neg_entropy_values():
    assert neg_entropy(_cube([0.0, 0.0, 1.0])).values[0, 0] == 0.0
    assert abs(neg_entropy(_cube([1 / 11] * 11)).values[0, 0] + math.log(11)) < 1e-12
    assert neg_entropy(_cube([0.5, 0.5, 0.0])).values[0, 0] == pytest.approx(-math.log(2), abs=1e-15)


@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_neg_entropy_bounds(seed, q):
    cube = random_cube(np.random.default_rng(seed), 3, 3, q, sharp=3.0)
    e = neg_entropy(cube).values
    assert (e <= 0).all() and (e >= -math.log(q) - 1e-12).all()
    assert (e < 0).all()  # no random pixel is one-hot


@given(st.floats(0.1, 0.45), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_margin_monotone_in_top(second, a, b):
    # same runner-up mass, different top mass; the rest goes to a third class
    # whose share stays in [0, second], so a and b map onto x in [lo, 1 - 2 * second]
    lo = max(0.0, 1.0 - 3 * second)
    rows = [[second + x, second, 1.0 - 2 * second - x] for x in (lo + u * (1 - 2 * second - lo) for u in (a, b))]
    assume(abs(a - b) > 1e-6)
    d = margin(_cube(np.array(rows)[None])).values[0]
    assert (d[0] > d[1]) == (a > b)


@given(st.integers(0, 2**32 - 1), st.floats(0.2, 5.0))
def test_argmax_invariant_under_temperature(seed, temp):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((4, 4, 5)) * 3
    classes = ClassSet.numbered(5)
    a = predict(ProbCube.from_array(probabilities_from_logits(logits), classes))
    b = predict(ProbCube.from_array(probabilities_from_logits(logits, temp), classes))
    assert np.array_equal(a.values, b.values)


def test_top_probability():
    out = top_probability(_cube([0.2, 0.3, 0.5]))
    assert out.values[0, 0] == 0.5 and out.kind == "other"


# --- gradient statistic --------------------------------------------------


def test_gradient_one_hot_is_zero():
    cube = _cube([0.0, 1.0, 0.0])
    feats = FeatureCube.from_array(np.array([[[3.0, 4.0]]]))
    assert gradient_stat(cube, feats).values[0, 0] == 0.0


def test_gradient_exact_two_class_value():
    # w = (0.6 * 0, 0.4): the weighted gradient is a single row 0.4 * phi
    cube = _cube([0.6, 0.4])
    feats = FeatureCube.from_array(np.array([[[0.0, 2.0]]]))
    assert gradient_stat(cube, feats).values[0, 0] == pytest.approx(0.8, abs=1e-15)


def test_gradient_three_class_matches_dense_oracle():
    p = np.array([0.6, 0.3, 0.1])
    phi = np.array([2.0, 0.0])
    got = gradient_stat(_cube(p), FeatureCube.from_array(phi[None, None])).values[0, 0]
    assert got == pytest.approx(dense_gradient_norm(p, phi), rel=1e-12)
    # Frobenius norm of the rank-one weighted gradient: 2 * sqrt(0.3^2 + 0.1^2)
    assert got == pytest.approx(2 * math.sqrt(0.1), rel=1e-12)


def test_gradient_absent_features():
    out = gradient_stat(_cube(np.full((2, 3, 3), 1 / 3)))
    assert out.kind == "gradient" and out.flags["omitted"] is True
    assert (out.values == 0).all()


def test_gradient_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        gradient_stat(_cube(np.full((2, 2, 3), 1 / 3)), FeatureCube.from_array(np.ones((2, 3, 4))))


@pytest.mark.parametrize("seed", range(25))
def test_gradient_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    cube = random_cube(rng, 8, 8, int(rng.integers(2, 7)))
    phi = rng.standard_normal((8, 8, 4))
    got = gradient_stat(cube, FeatureCube.from_array(phi)).values
    for r in range(8):
        for c in range(8):
            ref = dense_gradient_norm(cube.values[r, c], phi[r, c])
            assert abs(got[r, c] - ref) <= 1e-10 * max(ref, 1e-300)


def test_invalid_pixels_are_nan():
    cube = _cube(np.full((1, 2, 3), 1 / 3))
    valid = np.array([[True, False]])
    for stat in (margin(cube, valid), neg_entropy(cube, valid)):
        assert np.isnan(stat.values[0, 1]) and not np.isnan(stat.values[0, 0])
