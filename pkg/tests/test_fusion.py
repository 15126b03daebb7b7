import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.special import expit

from segconf.components import connected_components, inner_boundary_split
from segconf.errors import DegenerateStatistic, MissingStatistic, TooFewPixels
from segconf.fusion import (
    PREDICTED_CORRECT,
    PREDICTED_INCORRECT,
    NormalizationSpec,
    combine,
    fit_normalizer,
    refine,
    segment_confidence,
)
from segconf.pixel_stats import gradient_stat, margin, neg_entropy, predict
from segconf.raster import ClassSet, FeatureCube, LabelRaster, StatRaster
from segconf.segment_stats import SegmentStatTable, coverage

from conftest import random_cube
from oracles import naive_combine


def _stat(values, kind):
    return StatRaster.build(np.asarray(values, dtype=np.float64), kind)


def _segmap(values, q=3):
    lab = LabelRaster.from_array(np.asarray(values), ClassSet.numbered(q))
    return inner_boundary_split(connected_components(lab))


# --- normalizer ---------------------------------------------------------------


def test_uniform_statistic_percentiles():
    rng = np.random.default_rng(0)
    norm = fit_normalizer({"margin": _stat(rng.random((400, 500)), "margin")})
    lo, hi = norm.bounds["margin"]
    assert abs(lo - 0.01) <= 0.005 and abs(hi - 0.99) <= 0.005


def test_constant_statistic_is_degenerate():
    with pytest.raises(DegenerateStatistic):
        fit_normalizer({"margin": _stat(np.full((40, 40), 0.3), "margin")})


def test_too_few_pixels():
    with pytest.raises(TooFewPixels):
        fit_normalizer({"margin": _stat(np.arange(10.0).reshape(2, 5), "margin")})


def test_calibration_mask_restricts_sample():
    values = np.arange(4000.0).reshape(40, 100)
    mask = values < 2000
    norm = fit_normalizer({"margin": _stat(values, "margin")}, calibration_mask=mask)
    assert norm.bounds["margin"][1] < 2000


def test_omitted_statistic_skipped():
    rng = np.random.default_rng(1)
    cube = random_cube(rng, 40, 40, 3)
    norm = fit_normalizer({"margin": margin(cube), "gradient": gradient_stat(cube)})
    assert norm.active_stats == ("margin",)


def test_spec_json_round_trip(tmp_path):
    spec = NormalizationSpec({"margin": (0.1, 0.9), "coverage": (0.0, 1.0)})
    back = NormalizationSpec.load(spec.save(tmp_path / "norm.json"))
    assert back.bounds == spec.bounds and back.active_stats == spec.active_stats


# --- combine --------------------------------------------------------------------


def _four_stats(h, w, fill):
    stats = {k: _stat(np.full((h, w), fill[k]), k) for k in ("margin", "neg_entropy", "gradient")}
    sm = _segmap(np.zeros((h, w)))
    table = SegmentStatTable(sm, coverage=np.array([fill["coverage"]]), eta=0.9)
    return stats, table, sm


BOUNDS = {"margin": (0.1, 0.9), "neg_entropy": (-2.0, -0.1), "gradient": (0.2, 1.4), "coverage": (0.2, 0.8)}


def test_all_at_hi_is_sigmoid_four():
    stats, table, sm = _four_stats(2, 2, {k: hi for k, (lo, hi) in BOUNDS.items()})
    t = combine(stats, table, sm, NormalizationSpec(BOUNDS))
    assert np.all(np.abs(t.values - 1 / (1 + math.exp(-4))) <= 1e-12)
    assert t.kind == "confidence"


def test_all_at_midpoint_is_half():
    stats, table, sm = _four_stats(2, 2, {k: (lo + hi) / 2 for k, (lo, hi) in BOUNDS.items()})
    t = combine(stats, table, sm, NormalizationSpec(BOUNDS))
    np.testing.assert_allclose(t.values, 0.5, atol=1e-12)


def test_gradient_absent_rescales():
    stats, table, sm = _four_stats(2, 2, {k: hi for k, (lo, hi) in BOUNDS.items()})
    stats["gradient"] = StatRaster.build(np.zeros((2, 2)), "gradient", omitted=True)
    bounds = {k: v for k, v in BOUNDS.items() if k != "gradient"}
    t = combine(stats, table, sm, NormalizationSpec(bounds))
    assert np.all(np.abs(t.values - expit(4.0)) <= 1e-12)
    assert t.flags["active"] == "margin,neg_entropy,coverage"


def test_missing_statistic():
    stats, table, sm = _four_stats(2, 2, {k: hi for k, (lo, hi) in BOUNDS.items()})
    del stats["neg_entropy"]
    with pytest.raises(MissingStatistic):
        combine(stats, table, sm, NormalizationSpec(BOUNDS))


def _scene(seed, h=8, w=8):
    rng = np.random.default_rng(seed)
    cube = random_cube(rng, h, w, 3, sharp=1.5)
    feats = FeatureCube.from_array(rng.standard_normal((h, w, 4)))
    sm = inner_boundary_split(connected_components(predict(cube)))
    stats = {"margin": margin(cube), "neg_entropy": neg_entropy(cube), "gradient": gradient_stat(cube, feats)}
    return cube, sm, stats, coverage(cube, sm, 0.6)


@pytest.mark.parametrize("seed", range(10))
def test_combine_matches_naive_oracle(seed):
    cube, sm, stats, table = _scene(seed)
    rng = np.random.default_rng(seed + 100)
    bounds = {
        "margin": (0.05, 0.6),
        "neg_entropy": (-1.0, -0.3),
        "gradient": (0.1 + rng.random(), 2.0),
        "coverage": (0.1, 0.7),
    }
    t = combine(stats, table, sm, NormalizationSpec(bounds))
    cov = table.coverage[sm.segment_ids.astype(np.int64)]
    fields = {k: stats[k].values for k in ("margin", "neg_entropy", "gradient")} | {"coverage": cov}
    ref = naive_combine(fields, bounds)
    np.testing.assert_allclose(t.values, ref, rtol=1e-13, atol=0)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_monotone_in_each_statistic(a, b):
    assume(abs(a - b) > 1e-6)
    stats, table, sm = _four_stats(1, 2, {k: (lo + hi) / 2 for k, (lo, hi) in BOUNDS.items()})
    lo, hi = BOUNDS["margin"]
    x = np.array([[lo + (hi - lo) * (0.5 + a / 12), lo + (hi - lo) * (0.5 + b / 12)]])
    stats["margin"] = _stat(x, "margin")
    t = combine(stats, table, sm, NormalizationSpec(BOUNDS)).values[0]
    if a < b:
        assert t[0] < t[1]


@given(st.floats(0.1, 50.0), st.floats(-20.0, 20.0))
def test_affine_invariance_of_flags(scale, shift):
    cube, sm, stats, table = _scene(7, 40, 40)
    base = fit_normalizer(stats, table)
    t0 = combine(stats, table, sm, base)
    moved = dict(stats)
    moved["margin"] = _stat(stats["margin"].values * scale + shift, "margin")
    norm = fit_normalizer(moved, table)
    t1 = combine(moved, table, sm, norm)
    np.testing.assert_allclose(t1.values, t0.values, rtol=1e-9, atol=1e-12)
    r0 = segment_confidence(t0, sm, tau=0.4)
    r1 = segment_confidence(t1, sm, tau=0.4)
    # flags only move for segments sitting within rounding distance of tau
    stable = np.abs(r0.segment_conf - 0.4) > 1e-9
    assert np.array_equal(r0.incorrect[stable], r1.incorrect[stable])


# --- segment confidence and refinement -------------------------------------------


def _constant_conf(value, h=5, w=5):
    conf = StatRaster.build(np.full((h, w), value), "confidence")
    return conf, _segmap(np.zeros((h, w)))


@pytest.mark.parametrize("value,flag", [(0.9, PREDICTED_CORRECT), (0.1, PREDICTED_INCORRECT), (0.2, PREDICTED_CORRECT)])
def test_segment_flags(value, flag):
    conf, sm = _constant_conf(value)
    res = segment_confidence(conf, sm, tau=0.2)
    assert res.segment_conf[0] == pytest.approx(value)
    assert res.flags == {0: flag}


@pytest.fixture(scope="module")
def mixed():
    rng = np.random.default_rng(3)
    cube = random_cube(rng, 40, 40, 3, sharp=1.0)
    sm = inner_boundary_split(connected_components(predict(cube)))
    stats = {"margin": margin(cube), "neg_entropy": neg_entropy(cube)}
    table = coverage(cube, sm, 0.6)
    conf = combine(stats, table, sm, fit_normalizer(stats, table))
    return predict(cube), sm, conf


def test_refine_tau_zero_is_identity(mixed):
    pred, sm, conf = mixed
    for mode in ("segment", "pixel"):
        out = refine(pred, segment_confidence(conf, sm, tau=0.0), mode)
        assert out.values.tobytes() == pred.values.tobytes()


def test_refine_tau_one_abstains_everything(mixed):
    pred, sm, conf = mixed
    for mode in ("segment", "pixel"):
        out = refine(pred, segment_confidence(conf, sm, tau=1.0), mode)
        assert (out.values == pred.classes.abstain_index).all()


def test_segment_refine_recount(mixed):
    pred, sm, conf = mixed
    res = segment_confidence(conf, sm, tau=0.5)
    out = refine(pred, res, "segment")
    assert res.incorrect.any() and not res.incorrect.all()
    assert int(out.abstain_mask.sum()) == int(sm.sizes[res.incorrect].sum())


def test_refine_off(mixed):
    pred, sm, conf = mixed
    assert refine(pred, segment_confidence(conf, sm, tau=0.9), "off") is pred


@pytest.mark.parametrize("mode", ["segment", "pixel"])
def test_refine_idempotent(mixed, mode):
    pred, sm, conf = mixed
    res = segment_confidence(conf, sm, tau=0.5)
    once = refine(pred, res, mode)
    twice = refine(once, res, mode)
    assert np.array_equal(once.values, twice.values)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_abstention_nests_in_tau(mixed, t1, t2):
    pred, sm, conf = mixed
    lo, hi = sorted((t1, t2))
    for mode in ("segment", "pixel"):
        a = refine(pred, segment_confidence(conf, sm, tau=lo), mode).abstain_mask
        b = refine(pred, segment_confidence(conf, sm, tau=hi), mode).abstain_mask
        assert not (a & ~b).any()


def test_nodata_never_abstains():
    classes = ClassSet.numbered(2)
    pred = LabelRaster.from_array(np.array([[0, 255], [0, 0]]), classes)
    sm = inner_boundary_split(connected_components(pred))
    conf = StatRaster.build(np.where(pred.class_mask, 0.05, np.nan), "confidence")
    out = refine(pred, segment_confidence(conf, sm, tau=0.5), "pixel")
    assert out.values.tolist() == [[254, 255], [254, 254]]
