"""Evaluation: pixel-level F1/precision/recall and instance-level mask average recall.

Pixel metrics treat change as the positive class; precision with an empty
prediction is defined as 0 so dataset aggregation stays total. Instance AR
follows the COCO convention: predictions ranked by score, greedy matching
per IoU threshold in {0.50, 0.55, ..., 0.95}, recall averaged over the ten
thresholds, up to max_dets predictions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .interchange import RleMask
from .matching import ChangeMap, ChangeProposal, _TIME_ORDER
from .proposal import mask_iou

IOU_THRESHOLDS = tuple(0.5 + 0.05 * i for i in range(10))


@dataclass(frozen=True)
class PixelReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
        }


@dataclass(frozen=True)
class InstanceReport:
    ar: float
    per_iou_recall: dict[float, float]
    max_dets: int

    def to_dict(self) -> dict:
        return {
            "ar": self.ar,
            "per_iou_recall": {f"{t:.2f}": r for t, r in self.per_iou_recall.items()},
            "max_dets": self.max_dets,
        }


def _prf(tp: int, fp: int, fn: int) -> PixelReport:
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return PixelReport(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1)


def pixel_prf(pred: ChangeMap, gt: ChangeMap) -> PixelReport:
    """Binary pixel counts over the full raster; change is the positive class."""
    if pred.raster.shape != gt.raster.shape:
        raise ValidationError(f"dimension mismatch: pred {pred.raster.shape} vs gt {gt.raster.shape}")
    p, g = pred.raster, gt.raster
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return _prf(tp, fp, fn)


def aggregate_pixel_reports(reports: Iterable[PixelReport]) -> tuple[PixelReport, PixelReport]:
    """(micro, macro) dataset aggregation: micro sums counts, macro averages P/R/F1."""
    reports = list(reports)
    if not reports:
        raise ValidationError("nothing to aggregate")
    micro = _prf(
        tp=sum(r.tp for r in reports),
        fp=sum(r.fp for r in reports),
        fn=sum(r.fn for r in reports),
    )
    n = len(reports)
    p = sum(r.precision for r in reports) / n
    rc = sum(r.recall for r in reports) / n
    f1 = sum(r.f1 for r in reports) / n
    macro = PixelReport(tp=micro.tp, fp=micro.fp, fn=micro.fn, precision=p, recall=rc, f1=f1)
    return micro, macro


def binarize_gt(labels: np.ndarray) -> ChangeMap:
    """Collapse a multi-class change label raster to binary (0 = no change)."""
    return ChangeMap(raster=np.asarray(labels) != 0)


def mask_ar(
    preds: Sequence[ChangeProposal],
    gts: Sequence[RleMask],
    max_dets: int = 1000,
) -> InstanceReport:
    """COCO-style mask average recall at max_dets.

    Predictions are sorted descending by score (stable tie-break: T0 first,
    then ascending id) and truncated to max_dets. At each IoU threshold, each
    prediction greedily claims the unmatched GT of highest IoU >= threshold.
    """
    if not gts:
        raise ValidationError("mask_ar needs at least one ground-truth mask")
    ranked = sorted(preds, key=lambda c: (-c.score, _TIME_ORDER[c.source_time], c.proposal_id))[:max_dets]
    n_gt = len(gts)
    # IoU matrix once; matching loops per threshold are cheap
    iou = np.zeros((len(ranked), n_gt), dtype=np.float64)
    for i, p in enumerate(ranked):
        for j, g in enumerate(gts):
            iou[i, j] = mask_iou(p.mask, g)
    per_iou: dict[float, float] = {}
    for tau in IOU_THRESHOLDS:
        taken = np.zeros(n_gt, dtype=bool)
        matched = 0
        for i in range(len(ranked)):
            best_j = -1
            best = tau
            for j in range(n_gt):
                if not taken[j] and iou[i, j] >= best:
                    # strict > keeps the lowest GT index on exact ties
                    if best_j == -1 or iou[i, j] > best:
                        best = iou[i, j]
                        best_j = j
            if best_j >= 0:
                taken[best_j] = True
                matched += 1
        per_iou[tau] = matched / n_gt
    ar = sum(per_iou.values()) / len(IOU_THRESHOLDS)
    return InstanceReport(ar=ar, per_iou_recall=per_iou, max_dets=max_dets)


def format_eval_table(
    pixel_micro: PixelReport | None,
    pixel_macro: PixelReport | None,
    instance_macro_ar: float | None,
    n_pairs: int,
) -> str:
    """Aligned-column report: F1 / Prec. / Rec. / mask AR, percentages."""
    header = f"{'':<10}{'F1':>8}{'Prec.':>8}{'Rec.':>8}{'mask AR':>9}"
    lines = [header]

    def fmt(v: float | None) -> str:
        return f"{100.0 * v:>7.1f}" if v is not None else f"{'-':>7}"

    if pixel_micro is not None:
        lines.append(
            f"{'micro':<10}{fmt(pixel_micro.f1)} {fmt(pixel_micro.precision)} "
            f"{fmt(pixel_micro.recall)} {fmt(instance_macro_ar)}  "
        )
    if pixel_macro is not None:
        lines.append(
            f"{'macro':<10}{fmt(pixel_macro.f1)} {fmt(pixel_macro.precision)} "
            f"{fmt(pixel_macro.recall)} {fmt(instance_macro_ar)}  "
        )
    if pixel_micro is None and pixel_macro is None:
        lines.append(f"{'instance':<10}{fmt(None)} {fmt(None)} {fmt(None)} {fmt(instance_macro_ar)}  ")
    lines.append(f"pairs: {n_pairs}")
    return "\n".join(lines)
