"""Mask geometry and proposal post-processing.

Covers the quality filter and greedy NMS applied to raw segmentation
proposals, projection of full-resolution masks onto the embedding grid, and
mask-embedding extraction (mean of grid vectors over the projected
footprint). All operations are pure; batch extraction keeps output order
equal to input order regardless of evaluation schedule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .interchange import EmbeddingGrid, ProposalRecord, RleMask, Time, decode_rle


@dataclass(frozen=True)
class GridFootprint:
    """Cells of the embedding grid covered by a mask. Never empty."""

    cells: np.ndarray  # (n, 2) int array of (row, col)
    fallback_used: bool = False

    def __post_init__(self) -> None:
        if self.cells.ndim != 2 or self.cells.shape[1] != 2 or self.cells.shape[0] == 0:
            raise ValidationError("footprint must be a nonempty (n, 2) cell array")
        self.cells.setflags(write=False)


@dataclass(frozen=True)
class MaskEmbedding:
    """d_m-vector pooled from one grid under one mask footprint.

    embedding_time is the grid the vector was pooled from; mask_time is the
    proposal that supplied the footprint. They differ for cross-time pooling.
    """

    vector: np.ndarray
    proposal_id: int
    embedding_time: Time
    mask_time: Time

    def __post_init__(self) -> None:
        self.vector.setflags(write=False)


def mask_area(mask: RleMask) -> int:
    return mask.area


def mask_centroid(mask: RleMask) -> tuple[float, float]:
    """(row, col) centroid of the foreground pixels."""
    if mask.area == 0:
        raise ValidationError("empty mask has no centroid")
    h, w = mask.size
    runs = mask.one_runs()
    # per-run sums computed from flat indices: rows of a run may span a row break
    total = 0
    row_sum = 0.0
    col_sum = 0.0
    for s, e in runs:
        idx = np.arange(s, e, dtype=np.int64)
        total += e - s
        row_sum += float((idx // w).sum())
        col_sum += float((idx % w).sum())
    return (row_sum / total, col_sum / total)


def _interval_intersection(a: RleMask, b: RleMask) -> int:
    """Overlap pixel count of two masks from their run boundaries (no dense decode)."""
    bounds_a = a.boundaries()
    bounds_b = b.boundaries()
    cuts = np.union1d(bounds_a, bounds_b)
    cuts = np.concatenate(([0], cuts)) if cuts[0] != 0 else cuts.copy()
    starts = cuts[:-1]
    lengths = np.diff(cuts)
    # run index at each segment start; odd index = foreground (leading run is zeros)
    in_a = (np.searchsorted(bounds_a, starts, side="right") % 2) == 1
    in_b = (np.searchsorted(bounds_b, starts, side="right") % 2) == 1
    return int(lengths[in_a & in_b].sum())


def mask_iou(a: RleMask, b: RleMask) -> float:
    """Intersection-over-union of two same-size masks."""
    if a.size != b.size:
        raise ValidationError(f"mask size mismatch: {a.size} vs {b.size}")
    area_a = a.area
    area_b = b.area
    if area_a == 0 and area_b == 0:
        raise ValidationError("IoU undefined: both masks empty")
    inter = _interval_intersection(a, b)
    union = area_a + area_b - inter
    return inter / union


def quality_filter(
    candidates: Sequence[ProposalRecord],
    min_pred_iou: float = 0.5,
    min_stability: float = 0.8,
) -> list[ProposalRecord]:
    """Keep proposals meeting both quality thresholds (inclusive); order preserved.

    Defaults follow the standard operating point; datasets with noisier
    proposals override min_stability (0.95 for xView2-style imagery).
    """
    if not (0.0 <= min_pred_iou <= 1.0 and 0.0 <= min_stability <= 1.0):
        raise ValidationError("quality thresholds must lie in [0,1]")
    return [
        c for c in candidates
        if c.predicted_iou >= min_pred_iou and c.stability_score >= min_stability
    ]


def nms(proposals: Sequence[ProposalRecord], iou_threshold: float = 0.7) -> list[ProposalRecord]:
    """Greedy mask NMS by descending predicted_iou (ties: lower id first).

    A proposal is suppressed when its IoU with any already-kept proposal
    exceeds iou_threshold. Output is sorted by descending predicted_iou.
    """
    order = sorted(proposals, key=lambda p: (-p.predicted_iou, p.id))
    kept: list[ProposalRecord] = []
    for cand in order:
        if all(mask_iou(cand.mask, k.mask) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


class GridProjector:
    """Caches the pixel->cell map for one (image_size, grid_size) geometry.

    A cell is included in a mask's footprint iff at least half of its pixel
    block is covered; a mask too small to claim any cell falls back to the
    single cell containing its centroid.
    """

    def __init__(self, image_size: tuple[int, int], grid_size: tuple[int, int]):
        h, w = image_size
        he, we = grid_size
        if he < 1 or we < 1 or h < 1 or w < 1:
            raise ValidationError("image and grid sizes must be positive")
        if he > h or we > w:
            raise ValidationError(f"grid {grid_size} finer than image {image_size} is unsupported")
        self.image_size = (h, w)
        self.grid_size = (he, we)
        rows = (np.arange(h, dtype=np.int64) * he) // h
        cols = (np.arange(w, dtype=np.int64) * we) // w
        self._cell_of_pixel = (rows[:, None] * we + cols[None, :]).ravel()
        self._pixels_per_cell = np.bincount(self._cell_of_pixel, minlength=he * we)

    def footprint(self, mask: RleMask) -> GridFootprint:
        if mask.size != self.image_size:
            raise ValidationError(f"mask size {mask.size} does not match projector image size {self.image_size}")
        if mask.area == 0:
            raise ValidationError("cannot project an empty mask")
        he, we = self.grid_size
        dense = decode_rle(mask).ravel()
        covered = np.bincount(self._cell_of_pixel[dense], minlength=he * we)
        frac = covered / self._pixels_per_cell
        flat = np.flatnonzero(frac >= 0.5)
        if len(flat) == 0:
            r, c = mask_centroid(mask)
            h, w = self.image_size
            cell = (int(r) * he // h, int(c) * we // w)
            cell = (min(max(cell[0], 0), he - 1), min(max(cell[1], 0), we - 1))
            return GridFootprint(cells=np.array([cell], dtype=np.int64), fallback_used=True)
        cells = np.stack([flat // we, flat % we], axis=1)
        return GridFootprint(cells=cells, fallback_used=False)


def project_mask_to_grid(mask: RleMask, grid_size: tuple[int, int]) -> GridFootprint:
    """One-shot projection; use GridProjector when projecting many masks of one session."""
    return GridProjector(mask.size, grid_size).footprint(mask)


def mask_embedding(
    grid: EmbeddingGrid,
    footprint: GridFootprint,
    proposal_id: int = -1,
    embedding_time: Time = Time.T0,
    mask_time: Time = Time.T0,
) -> MaskEmbedding:
    """Arithmetic mean of the grid's vectors over the footprint cells (float64)."""
    he, we = grid.grid_size
    cells = footprint.cells
    if (cells[:, 0] < 0).any() or (cells[:, 0] >= he).any() or (cells[:, 1] < 0).any() or (cells[:, 1] >= we).any():
        raise ValidationError("footprint cell out of grid bounds")
    vecs = grid.values[cells[:, 0], cells[:, 1]].astype(np.float64)
    return MaskEmbedding(
        vector=vecs.mean(axis=0),
        proposal_id=proposal_id,
        embedding_time=embedding_time,
        mask_time=mask_time,
    )
