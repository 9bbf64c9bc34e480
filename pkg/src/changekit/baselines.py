"""Comparison methods: CVA, feature-CVA, mask matching, pixel-vote matching.

CVA here is the classic recipe: per-position l2 norm of the feature
difference, bilinear upsampling to image resolution, and a threshold (fixed
or Otsu). Applied to raw RGB it is the model-free baseline; applied to a
session's embedding grids it is the feature-space variant. The two
instance-level baselines reuse the session's object proposals: geometric
matching by mask IoU, and per-proposal voting over the CVA pixel map.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .interchange import EmbeddingGrid, Session, Time, decode_rle
from .matching import ChangeMap, ChangeProposal, _TIME_ORDER
from .proposal import mask_iou


def otsu_threshold(
    values: Sequence[float] | np.ndarray,
    bins: int = 256,
    value_range: Optional[tuple[float, float]] = None,
) -> float:
    """Threshold maximizing between-class variance over a binned histogram.

    Ties resolve to the lowest maximizing bin; the returned threshold is the
    upper edge of that bin. Raises when all values are identical (no split
    separates anything).
    """
    data = np.asarray(values, dtype=np.float64).ravel()
    if data.size < 2 or np.all(data == data[0]):
        raise ValidationError("otsu needs at least two distinct values")
    lo, hi = value_range if value_range is not None else (float(data.min()), float(data.max()))
    if not (hi > lo):
        raise ValidationError(f"empty value range ({lo}, {hi})")
    counts, edges = np.histogram(data, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    total = counts.sum()
    w0 = np.cumsum(counts)[:-1]  # mass of bins 0..k for split k
    w1 = total - w0
    mass = np.cumsum(counts * centers)[:-1]
    mass_total = float((counts * centers).sum())
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        raise ValidationError("otsu: all mass in a single bin")
    mu0 = np.where(valid, mass / np.maximum(w0, 1), 0.0)
    mu1 = np.where(valid, (mass_total - mass) / np.maximum(w1, 1), 0.0)
    between = np.where(valid, (w0 / total) * (w1 / total) * (mu0 - mu1) ** 2, -np.inf)
    k = int(np.argmax(between))  # argmax returns the first (lowest) maximizer
    return float(edges[k + 1])


def bilinear_resize(values: np.ndarray, out_size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel-center alignment (same convention as cv2.resize).

    Accepts (H, W) or (H, W, C); always returns float64.
    """
    src = np.asarray(values, dtype=np.float64)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[:, :, None]
    h, w, c = src.shape
    oh, ow = out_size
    if oh < 1 or ow < 1:
        raise ValidationError(f"bad output size {out_size}")

    def axis_coords(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
        pos = np.clip(pos, 0.0, n_src - 1.0)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_src - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis_coords(h, oh)
    c0, c1, fc = axis_coords(w, ow)
    top = src[r0][:, c0] * (1 - fc)[None, :, None] + src[r0][:, c1] * fc[None, :, None]
    bot = src[r1][:, c0] * (1 - fc)[None, :, None] + src[r1][:, c1] * fc[None, :, None]
    out = top * (1 - fr)[:, None, None] + bot * fr[:, None, None]
    return out[:, :, 0] if squeeze else out


def image_as_grid(rgb: np.ndarray) -> EmbeddingGrid:
    """Treat an 8-bit RGB image as a 3-channel feature grid (raw-image CVA)."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValidationError(f"expected (h, w, 3) RGB array, got shape {rgb.shape}")
    return EmbeddingGrid(values=rgb.astype(np.float32), demodulated=False)


def cva_change_map(
    pre_feats: EmbeddingGrid,
    post_feats: EmbeddingGrid,
    image_size: tuple[int, int],
    threshold: Optional[float] = None,
) -> tuple[np.ndarray, ChangeMap]:
    """Change-vector-analysis pixel map from two feature grids.

    Intensity is the per-position l2 norm of the feature difference,
    bilinearly upsampled to image_size; the binary map uses the given
    threshold, or Otsu over the upsampled intensities.
    """
    if pre_feats.values.shape != post_feats.values.shape:
        raise ValidationError(
            f"shape mismatch: {pre_feats.values.shape} vs {post_feats.values.shape}"
        )
    diff = pre_feats.values.astype(np.float64) - post_feats.values.astype(np.float64)
    intensity = np.linalg.norm(diff, axis=2)
    upsampled = bilinear_resize(intensity, image_size)
    if threshold is None:
        try:
            threshold = otsu_threshold(upsampled.ravel())
        except ValidationError:
            # identical grids: no separation, nothing is change
            threshold = math.inf
    return upsampled, ChangeMap(raster=upsampled > threshold)


def _ranked(changes: list[ChangeProposal]) -> list[ChangeProposal]:
    return sorted(changes, key=lambda c: (-c.score, _TIME_ORDER[c.source_time], c.proposal_id))


def mask_match(session: Session, iou_threshold: float = 0.5) -> list[ChangeProposal]:
    """Geometric baseline: a proposal is change iff no opposite-time mask matches it.

    Matched means IoU strictly above iou_threshold; unmatched proposals become
    change proposals scored by 1 - max IoU (ranking surrogate so all methods
    share the evaluation path).
    """
    out: list[ChangeProposal] = []
    for t in Time:
        opposite = session.proposals(t.other)
        for rec in session.proposals(t):
            best = 0.0
            for opp in opposite:
                iou = mask_iou(rec.mask, opp.mask)
                if iou > best:
                    best = iou
            if best <= iou_threshold:
                score = 1.0 - best
                out.append(
                    ChangeProposal(
                        mask=rec.mask,
                        source_time=t,
                        score=score,
                        angle_deg=math.degrees(math.acos(max(-1.0, min(1.0, -score)))),
                        proposal_id=rec.id,
                    )
                )
    return _ranked(out)


def cva_match(session: Session, vote_threshold: float = 0.5) -> list[ChangeProposal]:
    """Latent CVA baseline: per-proposal voting over the feature-CVA pixel map.

    A proposal becomes a change proposal iff strictly more than vote_threshold
    of its pixels are flagged by the Otsu-thresholded CVA map; the flagged
    fraction is its score.
    """
    _, cmap = cva_change_map(session.grid_t0, session.grid_t1, session.image_size)
    flagged = cmap.raster
    out: list[ChangeProposal] = []
    for t in Time:
        for rec in session.proposals(t):
            dense = decode_rle(rec.mask)
            frac = float(flagged[dense].sum()) / float(rec.mask.area)
            if frac > vote_threshold:
                out.append(
                    ChangeProposal(
                        mask=rec.mask,
                        source_time=t,
                        score=frac,
                        angle_deg=math.degrees(math.acos(max(-1.0, min(1.0, -frac)))),
                        proposal_id=rec.id,
                    )
                )
    return _ranked(out)
