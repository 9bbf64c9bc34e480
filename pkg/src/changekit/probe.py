"""Latent-space exploration: PCA-RGB rendering and semantic nearest-proposal queries.

The PCA fit uses power iteration with deflation on the position-vector
covariance (deterministic start vectors, fixed iteration order) so renders
reproduce bit-for-bit across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .interchange import EmbeddingGrid, ProposalRecord
from .proposal import GridProjector

_PCA_TOL = 1e-8
_PCA_MAX_ITER = 1000
_RANK_EPS = 1e-10


@dataclass(frozen=True)
class PcaBasis:
    """Mean vector plus leading principal directions of a position-vector cloud."""

    mean: np.ndarray  # (d_m,)
    directions: np.ndarray  # (components, d_m), orthonormal rows
    explained: tuple[float, ...]  # variance shares, non-increasing

    def __post_init__(self) -> None:
        self.mean.setflags(write=False)
        self.directions.setflags(write=False)


def _power_iteration(cov: np.ndarray, start: np.ndarray) -> tuple[float, np.ndarray]:
    v = start / np.linalg.norm(start)
    eigval = 0.0
    for _ in range(_PCA_MAX_ITER):
        w = cov @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0, v
        w /= norm
        eigval = float(w @ cov @ w)
        if float(np.linalg.norm(cov @ w - eigval * w)) <= _PCA_TOL * max(eigval, 1.0):
            return eigval, w
        v = w
    return eigval, v


def fit_pca(grid: EmbeddingGrid, components: int = 3) -> PcaBasis:
    """Leading principal directions of the grid's position vectors.

    Power iteration with deflation, tolerance 1e-8, at most 1000 iterations
    per component. Sign convention: each direction's largest-magnitude
    coordinate is positive. Raises on rank-deficient clouds (fewer nonzero
    eigenvalues than requested components).
    """
    he, we, d = grid.values.shape
    if he * we < components:
        raise ValidationError(f"need at least {components} positions, grid has {he * we}")
    data = grid.values.reshape(-1, d).astype(np.float64)
    mean = data.mean(axis=0)
    centered = data - mean
    cov = (centered.T @ centered) / centered.shape[0]
    total_var = float(np.trace(cov))
    if total_var <= _RANK_EPS:
        raise ValidationError("rank-deficient cloud: zero total variance (constant grid)")

    rng = np.random.default_rng(8271)
    work = cov.copy()
    directions = []
    eigvals = []
    for comp in range(components):
        eigval, vec = _power_iteration(work, rng.standard_normal(d))
        if eigval <= _RANK_EPS * total_var:
            raise ValidationError(
                f"rank-deficient cloud: only {comp} nonzero eigenvalues, {components} requested"
            )
        # deterministic sign: largest-magnitude coordinate positive
        pivot = int(np.argmax(np.abs(vec)))
        if vec[pivot] < 0:
            vec = -vec
        directions.append(vec)
        eigvals.append(eigval)
        work = work - eigval * np.outer(vec, vec)
    return PcaBasis(
        mean=mean,
        directions=np.stack(directions),
        explained=tuple(ev / total_var for ev in eigvals),
    )


def fit_pca_auto(grid: EmbeddingGrid, max_components: int = 3) -> PcaBasis:
    """fit_pca with as many components as the cloud's rank supports (at least 1).

    Lets rank-1 and rank-2 grids render (missing color channels map to 0);
    only a fully constant grid still fails.
    """
    for components in range(min(max_components, grid.height * grid.width), 0, -1):
        try:
            return fit_pca(grid, components=components)
        except ValidationError:
            if components == 1:
                raise
    raise ValidationError("rank-deficient cloud: no principal component exists")


def project_grid(grid: EmbeddingGrid, basis: PcaBasis) -> np.ndarray:
    """Per-position coordinates in the basis (He, We, components)."""
    if grid.channels != basis.mean.shape[0]:
        raise ValidationError(
            f"basis fitted on d_m={basis.mean.shape[0]}, grid has d_m={grid.channels}"
        )
    he, we, d = grid.values.shape
    centered = grid.values.reshape(-1, d).astype(np.float64) - basis.mean
    return (centered @ basis.directions.T).reshape(he, we, -1)


def pca_rgb(grid: EmbeddingGrid, basis: PcaBasis) -> np.ndarray:
    """Render the leading basis coordinates as an 8-bit color raster.

    Each channel is min-max normalized to [0, 255]. Channels without a
    component (rank-deficient clouds) and constant channels map to 0, so a
    rank-1 grid renders with its second and third channels black.
    """
    coords = project_grid(grid, basis)
    out = np.zeros((coords.shape[0], coords.shape[1], 3), dtype=np.uint8)
    for ch in range(min(3, coords.shape[2])):
        c = coords[:, :, ch]
        lo, hi = float(c.min()), float(c.max())
        if hi - lo <= 1e-12:
            continue
        out[:, :, ch] = np.round(255.0 * (c - lo) / (hi - lo)).astype(np.uint8)
    return out


@dataclass(frozen=True)
class QueryMatch:
    record: ProposalRecord
    similarity: float


def semantic_query(
    grid: EmbeddingGrid,
    proposals: Sequence[ProposalRecord],
    query_proposal_id: int,
    top_n: Optional[int] = None,
    image_size: Optional[tuple[int, int]] = None,
    cross: Optional[tuple[EmbeddingGrid, Sequence[ProposalRecord]]] = None,
) -> list[QueryMatch]:
    """Rank proposals by cosine similarity of mask embeddings to a query proposal.

    Ranks the other proposals of the same image, or, when `cross` supplies a
    second grid and proposal list, all proposals of that other image
    (inter-image probing). top_n larger than the pool returns the full
    ranking.
    """
    by_id = {p.id: p for p in proposals}
    if query_proposal_id not in by_id:
        raise ValidationError(f"query proposal id {query_proposal_id} not present")
    query_rec = by_id[query_proposal_id]
    img_size = image_size or query_rec.mask.size
    projector = GridProjector(img_size, grid.grid_size)

    def embed(g: EmbeddingGrid, proj: GridProjector, rec: ProposalRecord) -> np.ndarray:
        fp = proj.footprint(rec.mask)
        return g.values[fp.cells[:, 0], fp.cells[:, 1]].astype(np.float64).mean(axis=0)

    q = embed(grid, projector, query_rec)
    qn = float(np.linalg.norm(q))
    if qn == 0.0:
        raise ValidationError("query proposal has a zero-norm embedding")

    if cross is not None:
        pool_grid, pool_recs = cross
        pool_proj = GridProjector(img_size, pool_grid.grid_size)
        pool = [(pool_grid, pool_proj, r) for r in pool_recs]
    else:
        pool = [(grid, projector, r) for r in proposals if r.id != query_proposal_id]

    matches = []
    for g, proj, rec in pool:
        v = embed(g, proj, rec)
        vn = float(np.linalg.norm(v))
        if vn == 0.0:
            raise ValidationError(f"proposal {rec.id} has a zero-norm embedding")
        sim = max(-1.0, min(1.0, float(np.dot(q, v)) / (qn * vn)))
        matches.append(QueryMatch(record=rec, similarity=sim))
    matches.sort(key=lambda m: (-m.similarity, m.record.id))
    return matches[:top_n] if top_n is not None else matches
