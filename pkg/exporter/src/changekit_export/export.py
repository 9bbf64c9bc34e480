"""Session export: encode an image pair, demodulate, write engine-readable files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .backends import EncoderBackend, RawCandidate
from .demodulate import check_demodulated, demodulate
from .formats import proposal_line, write_manifest, write_proposals, write_tensor_archive

QUALITY_PRED_IOU = 0.5
QUALITY_STABILITY = 0.8
NMS_IOU = 0.7


@dataclass(frozen=True)
class ExportResult:
    manifest_path: Path
    image_size: tuple[int, int]
    embedding_size: tuple[int, int]
    d_m: int
    n_candidates: dict[str, int]


def _load_rgb(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def _dense_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.count_nonzero(a & b)
    if inter == 0:
        return 0.0
    return inter / np.count_nonzero(a | b)


def _prefilter(cands: list[RawCandidate]) -> list[RawCandidate]:
    """Storage-saving variant of the engine's quality filter + NMS (flag-gated)."""
    kept_quality = [
        c for c in cands
        if c.predicted_iou >= QUALITY_PRED_IOU and c.stability_score >= QUALITY_STABILITY
    ]
    ranked = sorted(enumerate(kept_quality), key=lambda t: (-t[1].predicted_iou, t[0]))
    kept: list[RawCandidate] = []
    for _, cand in ranked:
        if all(_dense_iou(cand.mask, k.mask) <= NMS_IOU for k in kept):
            kept.append(cand)
    return kept


def export_session(
    pre_image: str | Path,
    post_image: str | Path,
    backend: EncoderBackend,
    output_dir: str | Path,
    name: str = "session",
    points_per_side: int = 64,
    prefiltered: bool = False,
) -> ExportResult:
    """Run the encoder over both images and write a complete session.

    Writes demodulated embedding archives and raw proposal candidates for
    both times plus the manifest. Quality filtering and NMS are left to the
    engine unless prefiltered is set.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = {"T0": _load_rgb(pre_image), "T1": _load_rgb(post_image)}
    if images["T0"].shape != images["T1"].shape:
        raise ValueError(
            f"image size mismatch: {images['T0'].shape[:2]} vs {images['T1'].shape[:2]} "
            "(pairs must be co-registered and equal size)"
        )
    h, w = images["T0"].shape[:2]
    grid_size = backend.grid_size((h, w))

    manifest_rel: dict[str, dict[str, Optional[str]]] = {"embeddings": {}, "proposals": {}, "images": {}}
    counts: dict[str, int] = {}
    demod_ok = True
    for tag, img in images.items():
        low = tag.lower()
        raw, params = backend.encode(img)
        grid = demodulate(raw, params)
        if grid.values.shape != (grid_size[0], grid_size[1], backend.d_m):
            raise ValueError(
                f"backend geometry mismatch: declared {grid_size}+{backend.d_m}, got {grid.values.shape}"
            )
        demod_ok = demod_ok and check_demodulated(grid.values)
        emb_name = f"{name}_{low}.actensr"
        write_tensor_archive(grid.values, out / emb_name)

        cands = backend.propose(img, points_per_side)
        if prefiltered:
            cands = _prefilter(cands)
        lines = [
            proposal_line(i, c.mask, c.predicted_iou, c.stability_score, tag, c.prompt_point)
            for i, c in enumerate(cands)
        ]
        counts[tag] = len(lines)
        prop_name = f"{name}_{low}.jsonl"
        write_proposals(out / prop_name, lines)

        img_name = f"{name}_{low}.png"
        Image.fromarray(img, mode="RGB").save(out / img_name, format="PNG")
        manifest_rel["embeddings"][tag] = emb_name
        manifest_rel["proposals"][tag] = prop_name
        manifest_rel["images"][tag] = img_name

    manifest_path = out / f"{name}.json"
    write_manifest(
        manifest_path,
        image_size=(h, w),
        embedding_size=grid_size,
        d_m=backend.d_m,
        embeddings=manifest_rel["embeddings"],
        proposals=manifest_rel["proposals"],
        images=manifest_rel["images"],
        demodulated=demod_ok,
    )
    return ExportResult(
        manifest_path=manifest_path,
        image_size=(h, w),
        embedding_size=grid_size,
        d_m=backend.d_m,
        n_candidates=counts,
    )
