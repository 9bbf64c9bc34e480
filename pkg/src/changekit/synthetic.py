"""Deterministic synthetic sessions for demos, tests, and service fixtures.

Two generators: a fully random session (seeded) and a structured
two-cluster session whose object embeddings sit on orthogonal zero-mean
directions, the construction used to demonstrate point-query selectivity.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .images import write_rgb_png
from .interchange import (
    EmbeddingGrid,
    ProposalRecord,
    RleMask,
    Session,
    SessionManifest,
    Time,
    encode_rle,
    write_proposals,
    write_tensor_archive,
)


def walsh_vectors(d_m: int, count: int) -> np.ndarray:
    """Mutually orthogonal, zero-mean, +-1 vectors of norm sqrt(d_m).

    Rows 1..count of the d_m x d_m Hadamard matrix (row 0 is all-ones and is
    skipped: it has nonzero mean). d_m must be a power of two and count < d_m.
    Each row satisfies the demodulation property exactly.
    """
    if d_m & (d_m - 1) != 0:
        raise ValueError(f"d_m must be a power of two, got {d_m}")
    if count >= d_m:
        raise ValueError(f"at most {d_m - 1} zero-mean Walsh vectors exist for d_m={d_m}")
    i = np.arange(d_m)
    h = np.where(np.array([[bin(a & b).count("1") % 2 for b in i] for a in i]) == 0, 1.0, -1.0)
    return h[1 : count + 1].astype(np.float32)


def _rect_mask(size: tuple[int, int], r0: int, c0: int, r1: int, c1: int) -> RleMask:
    dense = np.zeros(size, dtype=bool)
    dense[r0:r1, c0:c1] = True
    return encode_rle(dense)


def random_session(
    rng: np.random.Generator,
    image_size: tuple[int, int] = (64, 64),
    grid_size: tuple[int, int] = (8, 8),
    d_m: int = 16,
    max_proposals_per_side: int = 50,
    demodulated: bool = False,
) -> Session:
    """Random grids and random rectangle proposals; always at least one proposal per side."""
    h, w = image_size

    def grid() -> EmbeddingGrid:
        values = rng.standard_normal((grid_size[0], grid_size[1], d_m)).astype(np.float32)
        if demodulated:
            values = values - values.mean(axis=2, keepdims=True)
            norms = np.linalg.norm(values, axis=2, keepdims=True)
            values = values / np.maximum(norms, 1e-9) * np.sqrt(d_m)
        return EmbeddingGrid(values=values.astype(np.float32), demodulated=demodulated)

    def proposals(t: Time) -> tuple[ProposalRecord, ...]:
        n = int(rng.integers(1, max_proposals_per_side + 1))
        recs = []
        for i in range(n):
            r0 = int(rng.integers(0, h - 1))
            c0 = int(rng.integers(0, w - 1))
            r1 = int(rng.integers(r0 + 1, h + 1))
            c1 = int(rng.integers(c0 + 1, w + 1))
            recs.append(
                ProposalRecord(
                    id=i,
                    mask=_rect_mask(image_size, r0, c0, r1, c1),
                    predicted_iou=float(rng.uniform(0.0, 1.0)),
                    stability_score=float(rng.uniform(0.0, 1.0)),
                    source_time=t,
                )
            )
        return tuple(recs)

    return Session(
        image_size=image_size,
        grid_t0=grid(),
        grid_t1=grid(),
        proposals_t0=proposals(Time.T0),
        proposals_t1=proposals(Time.T1),
    )


def cluster_session(
    image_size: tuple[int, int] = (64, 64),
    grid_size: tuple[int, int] = (8, 8),
    d_m: int = 16,
) -> Session:
    """Two-cluster construction: four objects per time on orthogonal semantic axes.

    Objects A1, A2 carry direction u_A; B1, B2 carry u_B (orthogonal to u_A);
    background carries a third direction shared by both times. At T1 every
    object's direction is negated, so all eight proposals are maximal changes
    (angle 180), while background stays identical (angle 0). Within-cluster
    semantic angle is 0, cross-cluster 90: a 45-degree point query on an A
    object keeps exactly the A changes. Grids satisfy the demodulation
    property exactly.
    """
    he, we = grid_size
    h, w = image_size
    if h % he or w % we:
        raise ValueError("image size must be a multiple of the grid size")
    u_a, u_b, u_bg = walsh_vectors(d_m, 3)

    # 2x2-cell objects in the four quadrants: A1, A2 on the diagonal, B1, B2 off it
    blocks = {
        "A1": (1, 1), "A2": (5, 5),
        "B1": (1, 5), "B2": (5, 1),
    }
    cell_h, cell_w = h // he, w // we

    def build_grid(sign: float) -> EmbeddingGrid:
        values = np.tile(u_bg, (he, we, 1)).astype(np.float32)
        for name, (r, c) in blocks.items():
            vec = u_a if name.startswith("A") else u_b
            values[r : r + 2, c : c + 2] = sign * vec
        return EmbeddingGrid(values=values, demodulated=True)

    def proposals(t: Time) -> tuple[ProposalRecord, ...]:
        recs = []
        for i, (name, (r, c)) in enumerate(sorted(blocks.items())):
            mask = _rect_mask(image_size, r * cell_h, c * cell_w, (r + 2) * cell_h, (c + 2) * cell_w)
            recs.append(
                ProposalRecord(
                    id=i,
                    mask=mask,
                    predicted_iou=0.9,
                    stability_score=0.9,
                    source_time=t,
                    prompt_point=((c + 1) * cell_w, (r + 1) * cell_h),
                )
            )
        return tuple(recs)

    return Session(
        image_size=image_size,
        grid_t0=build_grid(1.0),
        grid_t1=build_grid(-1.0),
        proposals_t0=proposals(Time.T0),
        proposals_t1=proposals(Time.T1),
    )


def cluster_query_point(session: Session, cluster: str = "A") -> tuple[float, float, Time]:
    """A point inside the first proposal of the requested cluster at T0."""
    index = {"A": 0, "B": 2}[cluster]  # blocks sorted: A1, A2, B1, B2
    rec = session.proposals_t0[index]
    assert rec.prompt_point is not None
    return (rec.prompt_point[0], rec.prompt_point[1], Time.T0)


def _session_image(session: Session, time: Time) -> np.ndarray:
    """A flat rendering of the grid structure so overlays have something to sit on."""
    grid = session.grid(time).values
    h, w = session.image_size
    he, we, _ = grid.shape
    # map the first three channels onto RGB, nearest-neighbor upsampled
    chans = grid[:, :, :3]
    lo, hi = float(chans.min()), float(chans.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    small = ((chans - lo) * scale).astype(np.uint8)
    rows = (np.arange(h) * he) // h
    cols = (np.arange(w) * we) // w
    return small[rows][:, cols]


def write_session(session: Session, root: str | Path, name: str = "session") -> Path:
    """Write a session's artifacts (archives, proposals, images, manifest); returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    demod = session.grid_t0.demodulated
    paths = {}
    for t in Time:
        tag = t.value.lower()
        emb = root / f"{name}_{tag}.actensr"
        write_tensor_archive(session.grid(t), emb)
        props = root / f"{name}_{tag}.jsonl"
        write_proposals(props, session.proposals(t))
        img = root / f"{name}_{tag}.png"
        write_rgb_png(_session_image(session, t), img)
        paths[t] = (emb, props, img)
    manifest = SessionManifest(
        image_size=session.image_size,
        embedding_size=session.grid_size,
        d_m=session.d_m,
        embedding_paths={t: paths[t][0] for t in Time},
        proposal_paths={t: paths[t][1] for t in Time},
        image_paths={t: paths[t][2] for t in Time},
        demodulated=demod,
    )
    manifest_path = root / f"{name}.json"
    manifest.write(manifest_path)
    return manifest_path
