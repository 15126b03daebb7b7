import csv
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from segconf.components import connected_components, inner_boundary_split
from segconf.errors import DegenerateVariance, EmptyPopulation, NoValidPixels
from segconf.evaluation import (
    Histogram,
    auroc,
    build_histograms,
    correlation,
    distribution_metrics,
    histogram_svg,
    iou,
    segment_iou,
)
from segconf.raster import ClassSet, LabelRaster, StatRaster

from oracles import direct_divergences, pairwise_auroc, pearson, recount_histogram

C2 = ClassSet.numbered(2)


def _lab(values, classes=C2):
    return LabelRaster.from_array(np.asarray(values, dtype=np.uint8), classes)


def _segmap(values, classes=C2):
    return inner_boundary_split(connected_components(_lab(values, classes)))


# --- IoU ------------------------------------------------------------------------


def test_iou_identity_and_disjoint():
    lab = _lab([[0, 1], [1, 0]])
    assert iou(lab, lab)[1] == 1.0
    per, macro = iou(_lab(np.zeros((2, 2))), _lab(np.ones((2, 2))))
    assert per == {1: 0.0} and macro == 0.0


# 9 pixels agree on class 0, 3 on class 1, 2 + 1 disagree, 1 nodata
IOU_PRED = [[0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 1], [1, 1, 1, 255]]
IOU_GT = [[0, 0, 0, 0], [0, 0, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0]]


def test_iou_hand_counted_fixture():
    per, macro = iou(_lab(IOU_PRED), _lab(IOU_GT))
    assert per == {0: 0.75, 1: 0.5}
    assert macro == 0.625


def test_iou_excludes_abstain_and_nodata():
    pred = _lab([[0, 254], [1, 1]])
    gt = _lab([[0, 1], [255, 1]])
    per, macro = iou(pred, gt)
    assert per == {0: 1.0, 1: 1.0}
    with pytest.raises(NoValidPixels):
        iou(_lab([[254]]), _lab([[0]]))


@given(st.integers(0, 2**32 - 1))
def test_macro_iou_symmetric_on_shared_classes(seed):
    rng = np.random.default_rng(seed)
    classes = ClassSet.numbered(3)
    a = _lab(rng.integers(0, 3, (6, 6)), classes)
    b = _lab(rng.integers(0, 3, (6, 6)), classes)
    present_a = set(np.unique(a.values).tolist())
    if present_a != set(np.unique(b.values).tolist()):
        return
    assert iou(a, b)[1] == pytest.approx(iou(b, a)[1], abs=1e-15)


def test_abstaining_worse_than_average_pixels_helps():
    rng = np.random.default_rng(5)
    classes = ClassSet.numbered(3)
    gt = rng.integers(0, 3, (30, 30))
    pred = gt.copy()
    wrong = rng.random((30, 30)) < 0.3
    pred[wrong] = (gt[wrong] + 1) % 3
    before = iou(_lab(pred, classes), _lab(gt, classes))[1]
    # abstain on a set that is 80% wrong (the scene is 70% right)
    pick = np.flatnonzero(wrong.ravel())[:80].tolist() + np.flatnonzero(~wrong.ravel())[:20].tolist()
    refined = pred.copy().ravel()
    refined[pick] = 254
    after = iou(_lab(refined.reshape(30, 30), classes), _lab(gt, classes))[1]
    assert after >= before


# --- per-segment IoU ---------------------------------------------------------------


def test_segment_iou_exact_and_wrong():
    gt = _lab([[0, 0, 1], [0, 0, 1]])
    sm = _segmap([[0, 0, 1], [0, 0, 1]])
    assert segment_iou(sm, gt).tolist() == [1.0, 1.0]
    sm_wrong = _segmap([[1, 1, 0], [1, 1, 0]])
    assert segment_iou(sm_wrong, gt).tolist() == [0.0, 0.0]


def test_segment_iou_block_inside_larger_component():
    gt = np.ones((5, 6), dtype=np.uint8)
    gt[1:4, 1:5] = 0  # 3x4 component of class 0
    pred = np.ones((5, 6), dtype=np.uint8)
    pred[1:4, 1:4] = 0  # 3x3 block
    sm = _segmap(pred)
    k = int(sm.segment_ids[1, 1])
    assert segment_iou(sm, _lab(gt))[k] == 0.75
    assert segment_iou(sm, _lab(gt), mode="accuracy")[k] == 1.0


def test_segment_iou_ignores_other_class_components():
    gt = _lab([[0, 0, 1, 1]])
    sm = _segmap([[0, 0, 0, 1]])
    # segment 0: TP 2, FP 1, FN 0 (the class-1 component does not count)
    assert segment_iou(sm, gt).tolist() == [2 / 3, 1.0 / 2]


# --- correlation -----------------------------------------------------------------


def test_correlation_extremes():
    x = np.array([0.1, 0.5, 0.7, 0.9])
    assert correlation(x, x) == pytest.approx(1.0, abs=1e-15)
    assert correlation(x, 1 - x) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(DegenerateVariance):
        correlation(x, np.ones(4))
    with pytest.raises(DegenerateVariance):
        correlation([0.3], [0.2])


@pytest.mark.parametrize("seed", range(10))
def test_correlation_matches_formula(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.random(50), rng.random(50)
    assert abs(correlation(x, y) - pearson(x.tolist(), y.tolist())) <= 1e-12


def test_spearman_uses_ranks():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert correlation(x, x**5, "spearman") == pytest.approx(1.0)


# --- histograms ---------------------------------------------------------------------


def _conf(values):
    return StatRaster.build(np.asarray(values, dtype=np.float64), "confidence")


def test_all_correct_has_empty_incorrect_counts():
    lab = _lab([[0, 1], [1, 0]])
    h = build_histograms(_conf(np.full((2, 2), 0.3)), lab, lab, 10)
    assert h.counts_incorrect.sum() == 0 and h.counts_correct.sum() == 4


def test_constant_half_lands_in_bin_50():
    lab = _lab(np.zeros((3, 3)))
    h = build_histograms(_conf(np.full((3, 3), 0.5)), lab, lab, 100)
    assert np.flatnonzero(h.counts_correct).tolist() == [50]


def test_one_goes_in_last_bin():
    lab = _lab([[0, 0]])
    h = build_histograms(_conf([[1.0, 0.0]]), lab, lab, 4)
    assert h.counts_correct.tolist() == [1, 0, 0, 1]


@pytest.mark.parametrize("seed", range(8))
def test_histogram_recount(seed):
    rng = np.random.default_rng(seed)
    classes = ClassSet.numbered(3)
    gt = rng.integers(0, 3, (20, 20))
    pred = np.where(rng.random((20, 20)) < 0.3, (gt + 1) % 3, gt)
    gt[rng.random((20, 20)) < 0.05] = 255
    pred[rng.random((20, 20)) < 0.05] = 254
    conf = np.round(rng.random((20, 20)), 2)  # many values sit exactly on edges
    conf[0, 0] = 1.0
    bins = int(rng.integers(2, 101))
    h = build_histograms(_conf(conf), _lab(pred, classes), _lab(gt, classes), bins)
    evaluated = (pred < 3) & (gt < 3)
    cc, ci = recount_histogram(conf, pred == gt, evaluated, bins)
    assert h.counts_correct.tolist() == cc and h.counts_incorrect.tolist() == ci


def test_histogram_csv(tmp_path):
    lab = _lab(np.zeros((2, 2)))
    h = build_histograms(_conf(np.full((2, 2), 0.5)), lab, lab, 10)
    rows = list(csv.reader(h.to_csv(tmp_path / "h.csv").open()))
    assert rows[0] == ["bin_lo", "bin_hi", "count_correct", "count_incorrect", "density_correct", "density_incorrect"]
    assert len(rows) == 11 and rows[6][2] == "4"


# --- distribution metrics --------------------------------------------------------


def _hist(cc, ci):
    n = len(cc)
    return Histogram(np.arange(n + 1) / n, np.asarray(cc), np.asarray(ci))


def test_identical_populations():
    m = distribution_metrics(_hist([3, 1, 0, 6], [3, 1, 0, 6]))
    for k in ("wasserstein", "js", "kl_fwd", "kl_rev", "euclidean"):
        assert m[k] == pytest.approx(0.0, abs=1e-12)
    assert m["overlap_pct"] == pytest.approx(100.0)


def test_opposite_deltas():
    cc = np.zeros(100, dtype=int)
    ci = np.zeros(100, dtype=int)
    cc[0], ci[99] = 5, 7
    m = distribution_metrics(_hist(cc, ci))
    assert m["wasserstein"] == pytest.approx(0.99, abs=1e-12)
    assert m["overlap_pct"] == 0.0
    assert m["euclidean"] == pytest.approx(math.sqrt(2), abs=1e-15)
    assert m["js"] == pytest.approx(math.log(2), abs=1e-9)


def test_empty_population():
    with pytest.raises(EmptyPopulation):
        distribution_metrics(_hist([1, 2], [0, 0]))


@given(st.lists(st.integers(0, 50), min_size=2, max_size=30), st.integers(0, 2**32 - 1))
def test_divergences_match_direct_sum(cc, seed):
    ci = np.random.default_rng(seed).integers(0, 50, len(cc))
    if sum(cc) == 0 or ci.sum() == 0:
        return
    h = _hist(cc, ci)
    m = distribution_metrics(h)
    ref = direct_divergences(h.density_correct.tolist(), h.density_incorrect.tolist())
    for k in ref:
        assert m[k] == pytest.approx(ref[k], rel=1e-9, abs=1e-12)
    assert m["kl_fwd"] >= 0 and m["kl_rev"] >= 0
    assert m["js"] <= math.log(2) + 1e-12
    swapped = distribution_metrics(_hist(ci, cc))
    assert swapped["js"] == pytest.approx(m["js"], rel=1e-12, abs=1e-15)
    assert swapped["wasserstein"] == pytest.approx(m["wasserstein"], rel=1e-12, abs=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_wasserstein_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.integers(1, 20, 12) for _ in range(3))
    w = lambda x, y: distribution_metrics(_hist(x, y))["wasserstein"]
    assert w(a, c) <= w(a, b) + w(b, c) + 1e-12


# --- AUROC ------------------------------------------------------------------------


def test_auroc_extremes():
    assert auroc([0.9, 0.8, 0.1, 0.2], [True, True, False, False]) == 1.0
    assert auroc([0.5] * 6, [True, False] * 3) == 0.5
    with pytest.raises(EmptyPopulation):
        auroc([0.5, 0.6], [True, True])


@pytest.mark.parametrize("seed", range(200))
def test_auroc_matches_pairwise(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 201))
    scores = np.round(rng.random(n), int(rng.integers(1, 4)))  # coarse rounding forces ties
    positive = rng.random(n) < rng.uniform(0.1, 0.9)
    if positive.all() or not positive.any():
        positive[0] = not positive[0]
    assert auroc(scores, positive) == pairwise_auroc(scores.tolist(), positive.tolist())


def test_svg_is_well_formed():
    h = _hist([1, 4, 2], [3, 0, 1])
    root = ET.fromstring(histogram_svg(h, title="a < b & c"))
    assert root.tag.endswith("svg")
    assert sum(1 for el in root.iter() if el.tag.endswith("rect")) >= 5
