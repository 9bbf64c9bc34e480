"""Minimal raster I/O: 1-bit change-map PNGs, 8-bit RGB, mask overlays."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import ValidationError
from .interchange import RleMask, decode_rle
from .matching import ChangeMap

# distinct fill colors cycled per instance; boundaries rendered in cyan
_PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 190), (0, 128, 128), (170, 110, 40),
]
_BOUNDARY = (0, 255, 255)


def write_change_map_png(cmap: ChangeMap, path: str | Path) -> None:
    """Write a change map as a 1-bit PNG (white = change)."""
    arr = (cmap.raster.astype(np.uint8) * 255)
    img = Image.fromarray(arr, mode="L").convert("1", dither=Image.Dither.NONE)
    img.save(path, format="PNG")


def read_change_map_png(path: str | Path) -> ChangeMap:
    img = Image.open(path).convert("L")
    return ChangeMap(raster=np.asarray(img) > 127)


def read_label_png(path: str | Path) -> np.ndarray:
    """Read a label raster (grayscale PNG; 0 = no change, nonzero = class labels)."""
    return np.asarray(Image.open(path).convert("L"))


def write_rgb_png(rgb: np.ndarray, path: str | Path) -> None:
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValidationError("expected uint8 (h, w, 3) array")
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def read_rgb_png(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def _boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbor outside the mask."""
    interior = mask.copy()
    interior[1:, :] &= mask[:-1, :]
    interior[:-1, :] &= mask[1:, :]
    interior[:, 1:] &= mask[:, :-1]
    interior[:, :-1] &= mask[:, 1:]
    # image border pixels are boundary when set
    interior[0, :] = False
    interior[-1, :] = False
    interior[:, 0] = False
    interior[:, -1] = False
    return mask & ~interior


def render_overlay(
    base_rgb: np.ndarray,
    masks: Sequence[RleMask],
    alpha: float = 0.45,
    colors: Optional[Sequence[tuple[int, int, int]]] = None,
) -> np.ndarray:
    """Alpha-blend instance masks onto an RGB image, cyan instance boundaries."""
    if base_rgb.ndim != 3 or base_rgb.shape[2] != 3:
        raise ValidationError("overlay base must be (h, w, 3)")
    out = base_rgb.astype(np.float64).copy()
    h, w = base_rgb.shape[:2]
    for i, rle in enumerate(masks):
        if rle.size != (h, w):
            raise ValidationError(f"mask size {rle.size} does not match image ({h}, {w})")
        color = np.asarray((colors or _PALETTE)[i % len(colors or _PALETTE)], dtype=np.float64)
        dense = decode_rle(rle)
        out[dense] = (1.0 - alpha) * out[dense] + alpha * color
        out[_boundary(dense)] = np.asarray(_BOUNDARY, dtype=np.float64)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)
