"""Writers for the engine's interchange formats.

Implemented here independently (not imported from the engine): the file
formats are the contract between the two packages, and this side only ever
writes. Layouts:

- tensor archive: 8 magic bytes ``ACTENSR1``, 4-byte little-endian header
  length, UTF-8 JSON header ``{shape, dtype, layout}``, raw little-endian
  float32 payload, row-major.
- proposals: one JSON object per line with the RLE counts inline
  (row-major scan, leading run counts zeros).
- manifest: one JSON object, paths relative to the manifest file.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

TENSOR_MAGIC = b"ACTENSR1"


def write_tensor_archive(values: np.ndarray, destination: str | Path) -> None:
    if values.ndim != 3:
        raise ValueError(f"embedding grids have rank 3, got shape {values.shape}")
    if not np.isfinite(values).all():
        raise ValueError("refusing to write non-finite values")
    header = {"shape": list(values.shape), "dtype": "f32", "layout": "row-major"}
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(destination, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        fh.write(values.astype("<f4", copy=False).tobytes(order="C"))


def encode_rle_counts(mask: np.ndarray) -> list[int]:
    """Row-major RLE, first run counts zeros."""
    flat = np.asarray(mask, dtype=bool).ravel(order="C")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], change, [flat.size]))
    counts = [int(c) for c in np.diff(edges)]
    if flat[0]:
        counts = [0] + counts
    return counts


def proposal_line(
    pid: int,
    mask: np.ndarray,
    predicted_iou: float,
    stability_score: float,
    source_time: str,
    prompt_point: Optional[tuple[float, float]] = None,
) -> str:
    return json.dumps(
        {
            "id": pid,
            "size": [int(mask.shape[0]), int(mask.shape[1])],
            "counts": encode_rle_counts(mask),
            "predicted_iou": float(predicted_iou),
            "stability_score": float(stability_score),
            "source_time": source_time,
            "prompt_point": list(prompt_point) if prompt_point is not None else None,
        },
        separators=(",", ":"),
    )


def write_proposals(path: str | Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def write_manifest(
    path: str | Path,
    image_size: tuple[int, int],
    embedding_size: tuple[int, int],
    d_m: int,
    embeddings: dict[str, str],
    proposals: dict[str, str],
    images: dict[str, Optional[str]],
    demodulated: bool,
) -> None:
    obj = {
        "image_size": list(image_size),
        "embedding_size": list(embedding_size),
        "d_m": int(d_m),
        "images": images,
        "embeddings": embeddings,
        "proposals": proposals,
        "demodulated": bool(demodulated),
    }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
