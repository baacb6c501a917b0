import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mammopipe.core_types import ClassId
from mammopipe.metrics import (
    ConfusionCounts,
    aggregate,
    confusion,
    dice,
    evaluate_pair,
    hausdorff_avg,
    iou,
    precision,
    recall,
    record_from_row,
)


def brute_counts(pred, gt, cls):
    tp = fp = fn = tn = 0
    for y in range(pred.shape[0]):
        for x in range(pred.shape[1]):
            p, g = pred[y, x] == cls, gt[y, x] == cls
            tp += p and g
            fp += p and not g
            fn += g and not p
            tn += not p and not g
    return tp, fp, fn, tn


def brute_hausdorff(a, b):
    def directed(u, v):
        return max(min(math.dist(p, q) for q in v) for p in u)

    return (directed(a, b) + directed(b, a)) / 2


def test_confusion_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(30):
        pred = rng.integers(0, 5, size=(8, 8))
        gt = rng.integers(0, 5, size=(8, 8))
        c = confusion(pred, gt)
        for cls in range(5):
            assert (c.tp[cls], c.fp[cls], c.fn[cls], c.tn[cls]) == brute_counts(pred, gt, cls)
            assert c.tp[cls] + c.fp[cls] + c.fn[cls] + c.tn[cls] == 64


def test_confusion_examples():
    gt = np.full((2, 2), ClassId.NIPPLE)
    c = confusion(np.zeros((2, 2), int), gt)
    n = ClassId.NIPPLE
    assert (c.tp[n], c.fn[n], c.fp[n], c.tn[n]) == (0, 4, 0, 0)
    same = confusion(gt, gt)
    assert not same.fp.any() and not same.fn.any()
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2)), np.zeros((2, 3)))


def _counts(tp, fp, fn, tn=0):
    z = np.zeros(5, int)
    arr = [z.copy() for _ in range(4)]
    for a, v in zip(arr, (tp, fp, fn, tn)):
        a[1] = v
    return ConfusionCounts(*arr)


def test_arithmetic_example():
    c = _counts(3, 1, 2)
    assert iou(c, 1) == 0.5
    assert dice(c, 1) == pytest.approx(0.6667, abs=5e-5)
    assert precision(c, 1) == 0.75 and recall(c, 1) == 0.6


def test_zero_over_zero_conventions():
    c = _counts(0, 0, 0, 10)
    assert c.absent_in_both(1)
    assert dice(c, 1) == iou(c, 1) == precision(c, 1) == recall(c, 1) == 1.0
    c = _counts(0, 0, 4, 6)
    assert precision(c, 1) == 0.0 and dice(c, 1) == 0.0


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
@settings(max_examples=200, deadline=None)
def test_dice_iou_identity_and_ordering(tp, fp, fn):
    if tp + fp + fn == 0:
        return
    c = _counts(tp, fp, fn)
    i, d = iou(c, 1), dice(c, 1)
    assert abs(d - 2 * i / (1 + i)) <= 1e-12
    assert i <= d <= 1
    if tp + fp and tp + fn:
        assert i <= min(precision(c, 1), recall(c, 1)) + 1e-15


def test_hausdorff_examples():
    assert hausdorff_avg([(1, 1)], [(4, 5)], 0.001) == pytest.approx(0.005, rel=1e-15)
    pts = [(0, 0), (3, 2), (5, 5)]
    assert hausdorff_avg(pts, pts, 0.1) == 0
    assert hausdorff_avg([], pts, 0.1) is None
    with pytest.raises(ValueError):
        hausdorff_avg(pts, pts, 0)


def test_hausdorff_oracle_symmetry_and_scaling():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = [tuple(p) for p in rng.integers(0, 16, size=(int(rng.integers(1, 12)), 2))]
        b = [tuple(p) for p in rng.integers(0, 16, size=(int(rng.integers(1, 12)), 2))]
        h = hausdorff_avg(a, b, 1.0)
        assert h == pytest.approx(brute_hausdorff(a, b), rel=1e-12)
        assert h == hausdorff_avg(b, a, 1.0)
        assert hausdorff_avg(a, b, 0.25) == h * 0.25


def test_evaluate_pair_flags():
    gt = np.zeros((6, 6), np.uint8)
    gt[1:3, 1:3] = ClassId.FATTY
    rec = evaluate_pair(gt, gt, image_id="a")
    assert rec.spacing_assumed and rec.spacing == 1e-4
    assert rec.vacuous[ClassId.NIPPLE] and not rec.vacuous[ClassId.FATTY]
    assert rec.value("dice", ClassId.FATTY) == 1.0
    assert rec.value("dice", ClassId.NIPPLE) == 1.0
    assert not rec.defined("dice", ClassId.NIPPLE)
    assert math.isnan(rec.value("hausdorff", ClassId.NIPPLE))
    assert rec.foreground_mean("dice") == 1.0
    rec2 = evaluate_pair(gt, gt, spacing=0.5)
    assert not rec2.spacing_assumed and rec2.spacing == 0.5


def test_aggregate_mean_column_examples():
    ge = record_from_row({"iou": [0.7488, 0.9608, 0.9069, 0.8078]})
    hol = record_from_row({"iou": [0.1463, 0.7677, 0.6487, 0.4192]})
    assert abs(aggregate([ge]).mean["iou"] - 0.8561) <= 1e-4
    assert abs(aggregate([hol]).mean["iou"] - 0.4955) <= 1e-4


def test_aggregate_single_record_and_exclusions():
    pred = np.zeros((8, 8), np.uint8)
    pred[2:5, 2:6] = ClassId.PECTORAL
    gt = pred.copy()
    gt[4, 2] = ClassId.FATTY
    rec = evaluate_pair(pred, gt, image_id="x", method="m")
    s = aggregate([rec])
    assert s.method == "m" and s.n_images == 1
    for m in rec.values:
        for c in range(5):
            if rec.defined(m, c):
                assert s.table[m][c] == rec.value(m, c)
            else:
                assert math.isnan(s.table[m][c]) and s.excluded[m][c] == 1
    with pytest.raises(ValueError):
        aggregate([])


def test_craniocaudal_overlap_rows_match(vendor_tables):
    # the craniocaudal Hausdorff rows are not the mean of their printed structure values, so only
    # the overlap rows are checked here
    for key in ("GE_CC", "HOLOGIC_CC"):
        for row in vendor_tables[key]:
            if row["metric"] == "Hausdorff":
                continue
            metric = row["metric"].lower()
            mean = aggregate([record_from_row({metric: row["values"]})]).mean[metric]
            assert round(abs(mean - row["mean"]), 12) <= 1e-4, (key, row)
