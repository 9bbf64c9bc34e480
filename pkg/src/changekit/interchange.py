"""Bit-exact interchange formats: tensor archives, RLE masks, proposal files, manifests.

This layer is the contract that decouples the engine from any neural runtime.
Everything here is plain files: a small binary container for float32 grids,
line-oriented JSON for masks/proposals, and a single JSON object per session.
All readers are pure; a loaded Session is immutable and safe to share across
threads.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DemodulationWarning, FormatError, ValidationError

TENSOR_MAGIC = b"ACTENSR1"

# Demodulated grids promise per-position zero channel mean and l2 norm sqrt(d_m).
DEMOD_MEAN_TOL = 1e-3
DEMOD_NORM_RTOL = 1e-2


class Time(str, Enum):
    """The two acquisition times of a bitemporal pair."""

    T0 = "T0"
    T1 = "T1"

    @property
    def other(self) -> "Time":
        return Time.T1 if self is Time.T0 else Time.T0


@dataclass(frozen=True)
class EmbeddingGrid:
    """Per-position feature field of one image: He x We cells, d_m channels.

    values are float32, row-major. `demodulated` marks grids whose position
    vectors satisfy the zero-mean / sqrt(d_m)-norm property.
    """

    values: np.ndarray
    demodulated: bool = False

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 3:
            raise ValidationError(f"embedding grid must have rank 3 (He, We, d_m), got shape {v.shape}")
        if v.shape[2] < 1:
            raise ValidationError("embedding grid needs d_m >= 1")
        if v.dtype != np.float32:
            object.__setattr__(self, "values", v.astype(np.float32))
        if not np.isfinite(self.values).all():
            raise ValidationError("embedding grid contains non-finite values")
        self.values.setflags(write=False)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def grid_size(self) -> tuple[int, int]:
        return (self.values.shape[0], self.values.shape[1])


def demodulation_violation(grid: EmbeddingGrid) -> Optional[str]:
    """Check the demodulation property; returns a description of the first violation or None.

    Every position vector must have |channel mean| <= 1e-3 and an l2 norm
    within 1e-2*sqrt(d_m) of sqrt(d_m). All-zero positions are reported too
    (degenerate grids fail the norm side).
    """
    v = grid.values.astype(np.float64)
    d = grid.channels
    means = v.mean(axis=2)
    bad = np.abs(means) > DEMOD_MEAN_TOL
    if bad.any():
        r, c = np.argwhere(bad)[0]
        return f"position ({r},{c}) has channel mean {means[r, c]:.3e} (tolerance {DEMOD_MEAN_TOL})"
    norms = np.linalg.norm(v, axis=2)
    target = math.sqrt(d)
    bad = np.abs(norms - target) > DEMOD_NORM_RTOL * target
    if bad.any():
        r, c = np.argwhere(bad)[0]
        return f"position ({r},{c}) has norm {norms[r, c]:.4f}, expected sqrt(d_m)={target:.4f} within {DEMOD_NORM_RTOL * target:.4f}"
    return None


# ---------------------------------------------------------------------------
# Tensor archive: magic, 4-byte LE header length, UTF-8 JSON header, raw payload
# ---------------------------------------------------------------------------


def write_tensor_archive(grid: EmbeddingGrid, destination: str | Path) -> None:
    """Write a grid as a self-describing little-endian float32 archive."""
    values = grid.values
    if not np.isfinite(values).all():
        raise ValidationError("refusing to write non-finite values")
    header = {"shape": list(values.shape), "dtype": "f32", "layout": "row-major"}
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    payload = values.astype("<f4", copy=False).tobytes(order="C")
    with open(destination, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        fh.write(payload)


def read_tensor_archive(source: str | Path) -> EmbeddingGrid:
    """Read an archive written by write_tensor_archive, bit-exact."""
    with open(source, "rb") as fh:
        magic = fh.read(8)
        if magic != TENSOR_MAGIC:
            raise FormatError(f"bad archive format: magic {magic!r} != {TENSOR_MAGIC!r}")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise FormatError("bad archive format: truncated header length")
        header_len = int.from_bytes(raw_len, "little")
        header_bytes = fh.read(header_len)
        if len(header_bytes) != header_len:
            raise FormatError("bad archive format: truncated header")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad archive format: unreadable header ({exc})") from exc
        if header.get("dtype") != "f32":
            raise FormatError(f"unsupported dtype {header.get('dtype')!r}")
        shape = header.get("shape")
        if (
            not isinstance(shape, list)
            or not shape
            or not all(isinstance(s, int) and s > 0 for s in shape)
        ):
            raise FormatError(f"bad archive format: invalid shape {shape!r}")
        expected = 4 * int(np.prod(shape))
        payload = fh.read(expected)
        if len(payload) != expected:
            raise FormatError(f"truncated payload: expected {expected} bytes, got {len(payload)}")
        values = np.frombuffer(payload, dtype="<f4").reshape(shape)
    if len(shape) != 3:
        raise FormatError(f"embedding grids must have rank 3, got {shape}")
    return EmbeddingGrid(values=values.copy())


# ---------------------------------------------------------------------------
# RLE masks: row-major scan, first run counts zeros
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RleMask:
    """Run-length encoded binary mask.

    Runs alternate zero/one starting with zeros over the row-major pixel scan.
    Only the leading run may be empty. This is deliberately the transpose of
    the common detection-dataset convention (which scans column-major); use
    convert_rle_order for files produced under that convention.
    """

    size: tuple[int, int]  # (height, width) in pixels
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        h, w = self.size
        if h < 1 or w < 1:
            raise ValidationError(f"mask size must be positive, got {self.size}")
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "size", (int(h), int(w)))
        if any(c < 0 for c in counts):
            raise FormatError("RLE counts must be non-negative")
        total = sum(counts)
        if total != h * w:
            raise FormatError(f"RLE counts sum {total} does not cover size {h}x{w}")
        for a, b in zip(counts, counts[1:]):
            if a == 0 and b == 0:
                raise FormatError("RLE has consecutive zero-length runs")
        if len(counts) > 1 and counts[-1] == 0:
            # trailing empty run carries no pixels; normalize it away
            object.__setattr__(self, "counts", counts[:-1])

    @property
    def area(self) -> int:
        """Foreground pixel count."""
        return sum(self.counts[1::2])

    def boundaries(self) -> np.ndarray:
        """Cumulative run boundaries (prefix sums), used by run-level set ops."""
        return np.cumsum(np.asarray(self.counts, dtype=np.int64))

    def one_runs(self) -> np.ndarray:
        """Foreground intervals as an (n, 2) array of [start, end) flat indices."""
        bounds = np.concatenate(([0], self.boundaries()))
        # bounds[i] .. bounds[i+1] is run i; odd runs are foreground
        idx = np.arange(1, len(self.counts), 2)
        if len(idx) == 0:
            return np.empty((0, 2), dtype=np.int64)
        return np.stack([bounds[idx], bounds[idx + 1]], axis=1)


def encode_rle(mask: np.ndarray) -> RleMask:
    """Encode a dense binary raster (row-major, leading zero run). Deterministic and canonical."""
    if mask.ndim != 2:
        raise ValidationError(f"mask raster must be 2-D, got shape {mask.shape}")
    flat = np.asarray(mask, dtype=bool).ravel(order="C")
    n = flat.size
    if n == 0:
        raise ValidationError("cannot encode an empty raster")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], change, [n]))
    runs = np.diff(edges)
    counts = list(runs)
    if flat[0]:
        counts = [0] + counts
    return RleMask(size=(mask.shape[0], mask.shape[1]), counts=tuple(int(c) for c in counts))


def decode_rle(rle: RleMask) -> np.ndarray:
    """Expand an RLE mask into a dense boolean raster."""
    h, w = rle.size
    values = np.zeros(len(rle.counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, np.asarray(rle.counts, dtype=np.int64))
    return flat.reshape(h, w)


def convert_rle_order(counts: Sequence[int], size: tuple[int, int]) -> RleMask:
    """Reinterpret column-major counts (the common detection convention) as a row-major mask."""
    h, w = size
    col_major = RleMask(size=(w, h), counts=tuple(counts))  # transpose scan
    dense = decode_rle(col_major).T
    return encode_rle(dense)


# ---------------------------------------------------------------------------
# Proposal records (one JSON object per line, RLE counts inline)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProposalRecord:
    """One object proposal: binary mask plus the segmentation model's quality scores."""

    id: int
    mask: RleMask
    predicted_iou: float
    stability_score: float
    source_time: Time
    prompt_point: Optional[tuple[float, float]] = None  # (x, y) in pixels

    def __post_init__(self) -> None:
        if self.mask.area == 0:
            raise ValidationError(f"proposal {self.id} has an empty mask")
        for name, v in (("predicted_iou", self.predicted_iou), ("stability_score", self.stability_score)):
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"proposal {self.id}: {name}={v} outside [0,1]")


def proposal_to_json(record: ProposalRecord) -> str:
    obj = {
        "id": record.id,
        "size": list(record.mask.size),
        "counts": list(record.mask.counts),
        "predicted_iou": record.predicted_iou,
        "stability_score": record.stability_score,
        "source_time": record.source_time.value,
        "prompt_point": list(record.prompt_point) if record.prompt_point is not None else None,
    }
    return json.dumps(obj, separators=(",", ":"))


def proposal_from_json(line: str, rle_order: str = "row-major") -> ProposalRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparseable proposal line: {exc}") from exc
    try:
        size = (int(obj["size"][0]), int(obj["size"][1]))
        if rle_order == "column-major":
            mask = convert_rle_order(obj["counts"], size)
        else:
            mask = RleMask(size=size, counts=tuple(obj["counts"]))
        pp = obj.get("prompt_point")
        return ProposalRecord(
            id=int(obj["id"]),
            mask=mask,
            predicted_iou=float(obj["predicted_iou"]),
            stability_score=float(obj["stability_score"]),
            source_time=Time(obj["source_time"]),
            prompt_point=(float(pp[0]), float(pp[1])) if pp is not None else None,
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise FormatError(f"proposal line missing field: {exc}") from exc


def write_proposals(path: str | Path, records: Iterable[ProposalRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(proposal_to_json(rec))
            fh.write("\n")


def read_proposals(path: str | Path, rle_order: str = "row-major") -> list[ProposalRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(proposal_from_json(line, rle_order=rle_order))
            except (FormatError, ValidationError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return records


def read_mask_lines(path: str | Path, rle_order: str = "row-major") -> list[RleMask]:
    """Read bare mask records ({size, counts} per line); used for instance GT files."""
    masks = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                size = (int(obj["size"][0]), int(obj["size"][1]))
                if rle_order == "column-major":
                    masks.append(convert_rle_order(obj["counts"], size))
                else:
                    masks.append(RleMask(size=size, counts=tuple(obj["counts"])))
            except (json.JSONDecodeError, KeyError, TypeError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: bad mask line ({exc})") from exc
    return masks


# ---------------------------------------------------------------------------
# Session manifest and loading
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SessionManifest:
    """Human-editable description of one bitemporal pair's artifacts.

    Relative paths resolve against the manifest file's directory.
    """

    image_size: tuple[int, int]  # (h, w)
    embedding_size: tuple[int, int]  # (He, We)
    d_m: int
    embedding_paths: dict[Time, Path]
    proposal_paths: dict[Time, Path]
    image_paths: dict[Time, Optional[Path]] = field(default_factory=dict)
    demodulated: bool = False

    @staticmethod
    def from_file(path: str | Path) -> "SessionManifest":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise FormatError(f"unparseable manifest {path}: {exc}") from exc
        return SessionManifest.from_dict(obj, base_dir=path.parent)

    @staticmethod
    def from_dict(obj: dict, base_dir: str | Path = ".") -> "SessionManifest":
        base = Path(base_dir)

        def resolve(p: Optional[str]) -> Optional[Path]:
            if p is None:
                return None
            q = Path(p)
            return q if q.is_absolute() else base / q

        try:
            images = obj.get("images", {})
            return SessionManifest(
                image_size=(int(obj["image_size"][0]), int(obj["image_size"][1])),
                embedding_size=(int(obj["embedding_size"][0]), int(obj["embedding_size"][1])),
                d_m=int(obj["d_m"]),
                embedding_paths={t: resolve(obj["embeddings"][t.value]) for t in Time},
                proposal_paths={t: resolve(obj["proposals"][t.value]) for t in Time},
                image_paths={t: resolve(images.get(t.value)) for t in Time},
                demodulated=bool(obj.get("demodulated", False)),
            )
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise FormatError(f"manifest missing or malformed field: {exc}") from exc

    def to_dict(self, relative_to: Optional[Path] = None) -> dict:
        def render(p: Optional[Path]) -> Optional[str]:
            if p is None:
                return None
            if relative_to is not None:
                try:
                    return str(p.relative_to(relative_to))
                except ValueError:
                    return str(p)
            return str(p)

        return {
            "image_size": list(self.image_size),
            "embedding_size": list(self.embedding_size),
            "d_m": self.d_m,
            "images": {t.value: render(self.image_paths.get(t)) for t in Time},
            "embeddings": {t.value: render(self.embedding_paths[t]) for t in Time},
            "proposals": {t.value: render(self.proposal_paths[t]) for t in Time},
            "demodulated": self.demodulated,
        }

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(relative_to=path.parent), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Session:
    """Immutable bitemporal working set: two grids, two proposal lists, image paths."""

    image_size: tuple[int, int]
    grid_t0: EmbeddingGrid
    grid_t1: EmbeddingGrid
    proposals_t0: tuple[ProposalRecord, ...]
    proposals_t1: tuple[ProposalRecord, ...]
    image_path_t0: Optional[Path] = None
    image_path_t1: Optional[Path] = None

    def grid(self, time: Time) -> EmbeddingGrid:
        return self.grid_t0 if time is Time.T0 else self.grid_t1

    def proposals(self, time: Time) -> tuple[ProposalRecord, ...]:
        return self.proposals_t0 if time is Time.T0 else self.proposals_t1

    def image_path(self, time: Time) -> Optional[Path]:
        return self.image_path_t0 if time is Time.T0 else self.image_path_t1

    @property
    def grid_size(self) -> tuple[int, int]:
        return self.grid_t0.grid_size

    @property
    def d_m(self) -> int:
        return self.grid_t0.channels

    def swapped(self) -> "Session":
        """The same pair with the two times exchanged (masks keep their own time's grid)."""
        return Session(
            image_size=self.image_size,
            grid_t0=self.grid_t1,
            grid_t1=self.grid_t0,
            proposals_t0=tuple(_retime(p, Time.T0) for p in self.proposals_t1),
            proposals_t1=tuple(_retime(p, Time.T1) for p in self.proposals_t0),
            image_path_t0=self.image_path_t1,
            image_path_t1=self.image_path_t0,
        )


def _retime(p: ProposalRecord, t: Time) -> ProposalRecord:
    return ProposalRecord(
        id=p.id,
        mask=p.mask,
        predicted_iou=p.predicted_iou,
        stability_score=p.stability_score,
        source_time=t,
        prompt_point=p.prompt_point,
    )


def load_session(
    manifest: SessionManifest | str | Path,
    strict_demodulation: bool = False,
    rle_order: str = "row-major",
) -> Session:
    """Load and validate a session from its manifest.

    Raises ValidationError on shape mismatch between the two times or between
    proposals and the declared image size. When the manifest claims
    demodulated embeddings but a grid violates the norm property, emits a
    DemodulationWarning (or raises, with strict_demodulation=True).
    """
    if not isinstance(manifest, SessionManifest):
        manifest = SessionManifest.from_file(manifest)

    grids = {}
    for t in Time:
        grids[t] = read_tensor_archive(manifest.embedding_paths[t])
    g0, g1 = grids[Time.T0], grids[Time.T1]
    if g0.values.shape != g1.values.shape:
        raise ValidationError(
            f"shape mismatch between the two embedding grids: {g0.values.shape} vs {g1.values.shape}"
        )
    declared = (manifest.embedding_size[0], manifest.embedding_size[1], manifest.d_m)
    if g0.values.shape != declared:
        raise ValidationError(f"shape mismatch: manifest declares {declared}, archives hold {g0.values.shape}")

    if manifest.demodulated:
        for t in Time:
            violation = demodulation_violation(grids[t])
            if violation is not None:
                msg = f"grid {t.value} fails the demodulation check: {violation}"
                if strict_demodulation:
                    raise ValidationError(msg)
                warnings.warn(msg, DemodulationWarning, stacklevel=2)

    proposals = {}
    for t in Time:
        recs = read_proposals(manifest.proposal_paths[t], rle_order=rle_order)
        for r in recs:
            if r.mask.size != manifest.image_size:
                raise ValidationError(
                    f"proposal {r.id} at {t.value} has mask size {r.mask.size}, "
                    f"manifest image size is {manifest.image_size}"
                )
            if r.source_time is not t:
                raise ValidationError(f"proposal {r.id} in the {t.value} file is tagged {r.source_time.value}")
        proposals[t] = tuple(recs)

    for t in Time:
        p = manifest.image_paths.get(t)
        if p is not None and not Path(p).exists():
            raise ValidationError(f"manifest references missing image {p}")

    demod = manifest.demodulated
    return Session(
        image_size=manifest.image_size,
        grid_t0=EmbeddingGrid(g0.values, demodulated=demod),
        grid_t1=EmbeddingGrid(g1.values, demodulated=demod),
        proposals_t0=proposals[Time.T0],
        proposals_t1=proposals[Time.T1],
        image_path_t0=manifest.image_paths.get(Time.T0),
        image_path_t1=manifest.image_paths.get(Time.T1),
    )
