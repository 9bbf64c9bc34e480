import numpy as np
import pytest

from changekit.errors import ValidationError
from changekit.interchange import Time, decode_rle, encode_rle
from changekit.matching import ChangeMap, ChangeProposal
from changekit.metrics import (
    IOU_THRESHOLDS,
    aggregate_pixel_reports,
    binarize_gt,
    mask_ar,
    pixel_prf,
)
from changekit.proposal import mask_iou

from oracles import dense_iou, greedy_ar, optimal_matching_count


def cmap(arr):
    return ChangeMap(raster=np.asarray(arr, dtype=bool))


def rect(size, r0, c0, r1, c1):
    dense = np.zeros(size, dtype=bool)
    dense[r0:r1, c0:c1] = True
    return encode_rle(dense)


def pred(mask, score, pid=0, t=Time.T0):
    return ChangeProposal(mask=mask, source_time=t, score=score, angle_deg=90.0, proposal_id=pid)


# ------------------------------------------------------------------ pixel_prf

def test_prf_identity():
    gt = cmap([[1, 0], [1, 1]])
    rep = pixel_prf(gt, gt)
    assert (rep.precision, rep.recall, rep.f1) == (1.0, 1.0, 1.0)


def test_prf_all_change_vs_half():
    # 2x2: pred all change, gt half change -> P=0.5, R=1, F1=2/3
    rep = pixel_prf(cmap([[1, 1], [1, 1]]), cmap([[1, 0], [0, 1]]))
    assert rep.precision == 0.5
    assert rep.recall == 1.0
    assert rep.f1 == pytest.approx(2 / 3)


def test_prf_empty_pred():
    rep = pixel_prf(cmap([[0, 0], [0, 0]]), cmap([[1, 1], [0, 0]]))
    assert rep.precision == 0.0
    assert rep.recall == 0.0
    assert rep.f1 == 0.0


def test_prf_swap_symmetry(rng):
    for _ in range(100):
        a = cmap(rng.random((7, 9)) < 0.4)
        b = cmap(rng.random((7, 9)) < 0.4)
        ab = pixel_prf(a, b)
        ba = pixel_prf(b, a)
        assert ab.precision == ba.recall
        assert ab.recall == ba.precision
        assert ab.f1 == pytest.approx(ba.f1, abs=1e-12)


def test_prf_dimension_mismatch():
    with pytest.raises(ValidationError, match="mismatch"):
        pixel_prf(cmap(np.zeros((2, 2))), cmap(np.zeros((3, 3))))


def test_prf_counts_consistent(rng):
    a = cmap(rng.random((16, 16)) < 0.3)
    b = cmap(rng.random((16, 16)) < 0.3)
    rep = pixel_prf(a, b)
    assert rep.tp + rep.fp == int(a.raster.sum())
    assert rep.tp + rep.fn == int(b.raster.sum())


def test_aggregate_micro_macro():
    r1 = pixel_prf(cmap([[1, 1], [0, 0]]), cmap([[1, 0], [0, 0]]))
    r2 = pixel_prf(cmap([[0, 0], [0, 0]]), cmap([[1, 1], [1, 1]]))
    micro, macro = aggregate_pixel_reports([r1, r2])
    assert micro.tp == r1.tp + r2.tp
    assert macro.precision == pytest.approx((r1.precision + r2.precision) / 2)


# ----------------------------------------------------------------- binarize

def test_binarize_all_zero():
    assert not binarize_gt(np.zeros((4, 4), dtype=np.uint8)).raster.any()


def test_binarize_multi_class():
    labels = np.array([[0, 3], [7, 0]], dtype=np.uint8)
    out = binarize_gt(labels)
    assert out.raster.tolist() == [[False, True], [True, False]]


def test_binarize_idempotent():
    binary = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    once = binarize_gt(binary)
    twice = binarize_gt(once.raster.astype(np.uint8))
    assert np.array_equal(once.raster, twice.raster)


# ------------------------------------------------------------------- mask_ar

def test_ar_perfect_predictions():
    size = (16, 16)
    gts = [rect(size, 0, 0, 4, 4), rect(size, 8, 8, 12, 12)]
    preds = [pred(gts[1], 0.5, pid=0), pred(gts[0], 0.9, pid=1)]
    rep = mask_ar(preds, gts)
    assert rep.ar == 1.0
    assert all(v == 1.0 for v in rep.per_iou_recall.values())


def test_ar_no_predictions():
    gts = [rect((8, 8), 0, 0, 4, 4)]
    rep = mask_ar([], gts)
    assert rep.ar == 0.0


def test_ar_empty_gts_error():
    with pytest.raises(ValidationError):
        mask_ar([], [])


def test_ar_hand_enumerated_065():
    """2 GTs, 3 preds: recall 1.0 for tau in {.50,.55,.60}, 0.5 for the other 7 -> ar 0.65.

    pred1 matches GT1 only up to tau=0.60 (IoU 0.6); pred2 keeps GT2 matched
    through tau=0.95 (IoU 0.96); pred3 (IoU 0.4) never matches. Hand
    enumeration: (3*1.0 + 7*0.5)/10 = 0.65.
    """
    size = (20, 40)
    gt1 = rect(size, 0, 0, 10, 10)  # area 100
    gt2 = rect(size, 0, 20, 10, 30)  # area 100
    p1 = rect(size, 0, 0, 6, 10)  # area 60 inside gt1 -> IoU 60/100 = 0.6
    assert mask_iou(p1, gt1) == pytest.approx(0.6)
    # gt2 minus a 2x2 corner: intersection 96, union 100 -> IoU 0.96
    p2_dense = decode_rle(gt2)
    p2_dense[8:10, 28:30] = False
    p2 = encode_rle(p2_dense)
    assert mask_iou(p2, gt2) == pytest.approx(0.96)
    p3 = rect(size, 0, 0, 4, 10)  # area 40 inside gt1 -> IoU 0.4
    assert mask_iou(p3, gt1) == pytest.approx(0.4)
    preds = [pred(p1, 0.9, pid=1), pred(p2, 0.8, pid=2), pred(p3, 0.7, pid=3)]
    rep = mask_ar(preds, [gt1, gt2])
    for tau in IOU_THRESHOLDS:
        expected = 1.0 if tau <= 0.6 else 0.5
        assert rep.per_iou_recall[tau] == expected
    assert rep.ar == pytest.approx((3 * 1.0 + 7 * 0.5) / 10)
    assert rep.ar == pytest.approx(0.65)


def test_ar_iou_090_variant_gives_060():
    # with pred2 at IoU 0.90 instead, GT2 drops out at tau=0.95: ar = (3+6*0.5)/10
    size = (20, 40)
    gt1 = rect(size, 0, 0, 10, 10)
    gt2 = rect(size, 0, 20, 10, 30)
    p1 = rect(size, 0, 0, 6, 10)
    p2 = rect(size, 0, 20, 9, 30)  # area 90 inside gt2 -> IoU 0.9
    p3 = rect(size, 0, 0, 4, 10)
    assert mask_iou(p2, gt2) == pytest.approx(0.9)
    preds = [pred(p1, 0.9, pid=1), pred(p2, 0.8, pid=2), pred(p3, 0.7, pid=3)]
    rep = mask_ar(preds, [gt1, gt2])
    assert rep.ar == pytest.approx(0.60)


def random_instances(rng, n_preds, n_gts, size=(24, 24)):
    def rand_rect():
        r0 = int(rng.integers(0, size[0] - 2))
        c0 = int(rng.integers(0, size[1] - 2))
        r1 = int(rng.integers(r0 + 1, min(r0 + 12, size[0]) + 1))
        c1 = int(rng.integers(c0 + 1, min(c0 + 12, size[1]) + 1))
        return rect(size, r0, c0, r1, c1)

    gts = [rand_rect() for _ in range(n_gts)]
    preds = [pred(rand_rect(), float(rng.uniform(0, 1)), pid=i) for i in range(n_preds)]
    return preds, gts


def test_ar_brute_force_small_instances(rng):
    for trial in range(500):
        n_preds = int(rng.integers(0, 7))
        n_gts = int(rng.integers(1, 7))
        preds, gts = random_instances(rng, n_preds, n_gts)
        rep = mask_ar(preds, gts)
        ranked = sorted(preds, key=lambda c: (-c.score, c.proposal_id))
        iou = np.zeros((len(ranked), len(gts)))
        for i, p in enumerate(ranked):
            pd = decode_rle(p.mask)
            for j, g in enumerate(gts):
                iou[i, j] = dense_iou(pd, decode_rle(g))
        per, ar = greedy_ar(iou, len(gts))
        assert rep.per_iou_recall == per
        assert rep.ar == pytest.approx(ar, abs=1e-12)
        # greedy never beats the optimal assignment
        for tau in IOU_THRESHOLDS:
            greedy_matched = round(per[tau] * len(gts))
            assert greedy_matched <= optimal_matching_count(iou, tau)


def test_ar_monotone_in_predictions(rng):
    for trial in range(100):
        n_gts = int(rng.integers(1, 5))
        preds, gts = random_instances(rng, 5, n_gts)
        base = mask_ar(preds[:-1], gts).ar
        more = mask_ar(preds, gts).ar
        assert more >= base - 1e-12


def test_ar_max_dets_truncation():
    size = (8, 8)
    gt = rect(size, 0, 0, 4, 4)
    good = pred(gt, 0.1, pid=0)  # low score, perfect mask
    bad = pred(rect(size, 4, 4, 8, 8), 0.9, pid=1)
    assert mask_ar([bad, good], [gt], max_dets=1).ar == 0.0
    assert mask_ar([bad, good], [gt], max_dets=2).ar == 1.0
