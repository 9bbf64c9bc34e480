"""Bitemporal latent matching: change scoring, candidate generation, selection.

Every proposal's footprint is pooled on both grids; the change confidence is
the negative cosine similarity between the two pooled embeddings (the raw
/d_m variant is kept as an alternate scoring for comparison). Bidirectional
matching scores both proposal sets, guaranteeing temporal symmetry of the
candidate multiset. Selection is top-k, fixed angle threshold, or a
per-session Otsu threshold over the candidate angle distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import UnresolvablePointError, ValidationError
from .interchange import EmbeddingGrid, ProposalRecord, RleMask, Session, Time, decode_rle
from .proposal import GridFootprint, GridProjector, MaskEmbedding, mask_area, mask_centroid, mask_iou

DEFAULT_ANGLE_THRESHOLD_DEG = 155.0
DEFAULT_SEMANTIC_ANGLE_DEG = 60.0
POINT_RESOLVE_RADIUS_PX = 50.0

_TIME_ORDER = {Time.T0: 0, Time.T1: 1}


@dataclass(frozen=True)
class ChangeProposal:
    """An instance mask asserted to have changed, with confidence score and angle.

    score is the change confidence: under cosine scoring it equals
    -cos(embedding pair) and angle_deg == degrees(acos(-score)); under raw
    scoring the score is -(x.y)/d_m (unbounded off the hypersphere) while the
    angle is still derived from the normalized cosine.
    """

    mask: RleMask
    source_time: Time
    score: float
    angle_deg: float
    proposal_id: int

    def __post_init__(self) -> None:
        if self.mask.area == 0:
            raise ValidationError("change proposal mask is empty")


@dataclass(frozen=True)
class MatchConfig:
    """Selection configuration for bitemporal latent matching."""

    mode: str = "angle_threshold"  # topk | angle_threshold | auto_otsu
    k: Optional[int] = None
    angle_threshold_deg: float = DEFAULT_ANGLE_THRESHOLD_DEG
    scoring: str = "cosine"  # cosine | eq1_raw
    direction: str = "bidirectional"  # bidirectional | t_to_t1 | t1_to_t
    dedupe_iou: Optional[float] = None

    def validated(self) -> "MatchConfig":
        if self.mode not in ("topk", "angle_threshold", "auto_otsu"):
            raise ValidationError(f"unknown selection mode {self.mode!r}")
        if self.scoring not in ("cosine", "eq1_raw"):
            raise ValidationError(f"unknown scoring {self.scoring!r}")
        if self.direction not in ("bidirectional", "t_to_t1", "t1_to_t"):
            raise ValidationError(f"unknown direction {self.direction!r}")
        if self.mode == "topk" and (self.k is None or self.k < 1):
            raise ValidationError("topk mode needs k >= 1")
        if self.mode == "angle_threshold" and not (0.0 < self.angle_threshold_deg < 180.0):
            raise ValidationError("angle threshold must lie in (0, 180) degrees")
        if self.dedupe_iou is not None and not (0.0 <= self.dedupe_iou <= 1.0):
            raise ValidationError("dedupe_iou must lie in [0,1]")
        return self


@dataclass(frozen=True)
class PointQuery:
    """Single-time points naming an object class, plus the semantic angle gate."""

    points: tuple[tuple[float, float, Time], ...]  # (x, y, time)
    semantic_angle_deg: float = DEFAULT_SEMANTIC_ANGLE_DEG

    def __post_init__(self) -> None:
        if len(self.points) < 1:
            raise ValidationError("point query needs at least one point")
        if not (0.0 <= self.semantic_angle_deg <= 180.0):
            raise ValidationError("semantic angle must lie in [0, 180] degrees")


@dataclass(frozen=True)
class ChangeMap:
    """Pixel-level binary change raster."""

    raster: np.ndarray

    def __post_init__(self) -> None:
        if self.raster.ndim != 2:
            raise ValidationError("change map raster must be 2-D")
        if self.raster.dtype != bool:
            object.__setattr__(self, "raster", self.raster.astype(bool))
        self.raster.setflags(write=False)

    @property
    def size(self) -> tuple[int, int]:
        return self.raster.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class Candidate:
    """One scored change candidate with its poolings on both grids."""

    proposal: ChangeProposal
    embedding_t0: np.ndarray  # pooled on the T0 grid under the proposal's footprint
    embedding_t1: np.ndarray
    footprint: GridFootprint


def change_score(x: MaskEmbedding, y: MaskEmbedding, scoring: str = "cosine") -> tuple[float, float]:
    """Change confidence and change angle for a pooled embedding pair.

    cosine: score = -(x.y)/(|x||y|) clamped to [-1, 1].
    eq1_raw: score = -(x.y)/d_m exactly.
    The angle is degrees(acos(-cosine)) in both modes: 0 means identical
    semantics, 180 opposite.
    """
    return _score_vectors(x.vector, y.vector, scoring)


def _score_vectors(x: np.ndarray, y: np.ndarray, scoring: str) -> tuple[float, float]:
    if x.shape != y.shape:
        raise ValidationError(f"embedding dimensionality mismatch: {x.shape} vs {y.shape}")
    d_m = x.shape[0]
    dot = float(np.dot(x, y))
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        raise ValidationError("zero-norm embedding: cosine undefined")
    cos = max(-1.0, min(1.0, dot / (nx * ny)))
    angle = math.degrees(math.acos(cos))
    if scoring == "cosine":
        return -cos, angle
    if scoring == "eq1_raw":
        return -dot / d_m, angle
    raise ValidationError(f"unknown scoring {scoring!r}")


def compute_candidates(
    session: Session,
    scoring: str = "cosine",
    direction: str = "bidirectional",
) -> list[Candidate]:
    """Score every proposal of the requested direction(s) against the other-time grid.

    For a proposal at time t the footprint is pooled on z_t and on the other
    grid z_{t'} (same footprint, other time), and the pair is scored. Under
    bidirectional the candidate list holds N_t0 + N_t1 entries, T0 block
    first, each block in proposal order.
    """
    projector = GridProjector(session.image_size, session.grid_size)
    times: tuple[Time, ...]
    if direction == "bidirectional":
        times = (Time.T0, Time.T1)
    elif direction == "t_to_t1":
        times = (Time.T0,)
    elif direction == "t1_to_t":
        times = (Time.T1,)
    else:
        raise ValidationError(f"unknown direction {direction!r}")

    flat = {t: session.grid(t).values.reshape(-1, session.d_m) for t in Time}
    we = session.grid_size[1]
    out: list[Candidate] = []
    for t in times:
        other = t.other
        for rec in session.proposals(t):
            fp = projector.footprint(rec.mask)
            rows = fp.cells[:, 0] * we + fp.cells[:, 1]
            e_own = flat[t][rows].astype(np.float64).mean(axis=0)
            e_other = flat[other][rows].astype(np.float64).mean(axis=0)
            x, y = (e_own, e_other) if t is Time.T0 else (e_other, e_own)
            score, angle = _score_vectors(e_own, e_other, scoring)
            out.append(
                Candidate(
                    proposal=ChangeProposal(
                        mask=rec.mask,
                        source_time=t,
                        score=score,
                        angle_deg=angle,
                        proposal_id=rec.id,
                    ),
                    embedding_t0=x,
                    embedding_t1=y,
                    footprint=fp,
                )
            )
    return out


def _sort_key(c: Candidate):
    # descending score; ties broken by source time (T0 first) then ascending id
    return (-c.proposal.score, _TIME_ORDER[c.proposal.source_time], c.proposal.proposal_id)


def select_candidates(candidates: Sequence[Candidate], config: MatchConfig) -> list[Candidate]:
    """Apply the configured selection to a scored candidate list."""
    config = config.validated()
    ranked = sorted(candidates, key=_sort_key)
    if config.mode == "topk":
        kept = ranked[: config.k]
    else:
        threshold = config.angle_threshold_deg
        if config.mode == "auto_otsu":
            threshold = otsu_angle_threshold([c.proposal.angle_deg for c in candidates])
        kept = [c for c in ranked if c.proposal.angle_deg >= threshold]
    if config.dedupe_iou is not None:
        kept = _dedupe(kept, config.dedupe_iou)
    return kept


def otsu_angle_threshold(angles_deg: Sequence[float]) -> float:
    """Per-session angle threshold via Otsu over [0, 180] with 256 bins.

    Falls back to the fixed default when the distribution is degenerate
    (all angles in a single histogram bin), where Otsu separates nothing.
    """
    from .baselines import otsu_threshold  # local import: baselines depends on this module

    values = list(angles_deg)
    counts, _ = np.histogram(values, bins=256, range=(0.0, 180.0))
    if np.count_nonzero(counts) < 2:
        return DEFAULT_ANGLE_THRESHOLD_DEG
    return otsu_threshold(values, bins=256, value_range=(0.0, 180.0))


def _dedupe(kept: Sequence[Candidate], iou_threshold: float) -> list[Candidate]:
    # greedy NMS over change proposals keyed by score (they carry no predicted_iou)
    out: list[Candidate] = []
    for cand in kept:
        if all(mask_iou(cand.proposal.mask, k.proposal.mask) <= iou_threshold for k in out):
            out.append(cand)
    return out


def bitemporal_latent_match(session: Session, config: MatchConfig = MatchConfig()) -> list[ChangeProposal]:
    """Full pipeline: score candidates in the configured direction(s), then select.

    Output is sorted descending by score with the deterministic tie-break
    (T0 before T1, then ascending proposal id). An empty candidate set yields
    an empty list.
    """
    config = config.validated()
    candidates = compute_candidates(session, scoring=config.scoring, direction=config.direction)
    return [c.proposal for c in select_candidates(candidates, config)]


# ---------------------------------------------------------------------------
# Point query
# ---------------------------------------------------------------------------


def resolve_point_to_proposal(
    point: tuple[float, float],
    proposals: Sequence[ProposalRecord],
) -> ProposalRecord:
    """Attach a query point to the smallest proposal containing it.

    When no mask contains the point, falls back to the proposal with the
    nearest centroid within 50 px. Deterministic tie-break by id. Raises
    UnresolvablePointError otherwise (message carries the nearest distance,
    surfaced by the service).
    """
    if not proposals:
        raise UnresolvablePointError("no proposals available to resolve the point against")
    x, y = point
    h, w = proposals[0].mask.size
    r, c = int(math.floor(y)), int(math.floor(x))
    containing: list[ProposalRecord] = []
    if 0 <= r < h and 0 <= c < w:
        flat = r * w + c
        for rec in proposals:
            bounds = rec.mask.boundaries()
            if (int(np.searchsorted(bounds, flat, side="right")) % 2) == 1:
                containing.append(rec)
    if containing:
        return min(containing, key=lambda p: (mask_area(p.mask), p.id))
    dists = []
    for rec in proposals:
        cr, cc = mask_centroid(rec.mask)
        dists.append((math.hypot(cc - x, cr - y), rec.id, rec))
    best = min(dists, key=lambda t: (t[0], t[1]))
    if best[0] > POINT_RESOLVE_RADIUS_PX:
        raise UnresolvablePointError(
            f"unresolvable point ({x:.1f}, {y:.1f}): nearest proposal centroid is {best[0]:.1f} px away "
            f"(limit {POINT_RESOLVE_RADIUS_PX:.0f} px)"
        )
    return best[2]


# pluggable point resolution: (point_xy, time, that time's proposals) -> proposal.
# A decoder-equipped backend (live point-prompt bridge) can substitute the
# default proposal-lookup rule here.
PointResolver = Callable[[tuple[float, float], Time, Sequence[ProposalRecord]], ProposalRecord]


def default_point_resolver(
    point: tuple[float, float], time: Time, proposals: Sequence[ProposalRecord]
) -> ProposalRecord:
    return resolve_point_to_proposal(point, proposals)


def _semantic_angle(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValidationError("zero-norm embedding in semantic angle")
    cos = max(-1.0, min(1.0, float(np.dot(u, v)) / (nu * nv)))
    return math.degrees(math.acos(cos))


def query_embedding(
    query: PointQuery,
    session: Session,
    resolver: Optional[PointResolver] = None,
) -> np.ndarray:
    """Average mask embedding of the query points, each pooled from its own-time grid."""
    resolve = resolver or default_point_resolver
    projector = GridProjector(session.image_size, session.grid_size)
    vectors = []
    for (x, y, t) in query.points:
        h, w = session.image_size
        if not (0.0 <= x < w and 0.0 <= y < h):
            raise ValidationError(f"query point ({x}, {y}) outside image bounds {session.image_size}")
        rec = resolve((x, y), t, session.proposals(t))
        fp = projector.footprint(rec.mask)
        grid = session.grid(t)
        vec = grid.values[fp.cells[:, 0], fp.cells[:, 1]].astype(np.float64).mean(axis=0)
        vectors.append(vec)
    mean = np.mean(np.stack(vectors), axis=0)
    if float(np.linalg.norm(mean)) == 0.0:
        raise ValidationError("query embedding has zero norm")
    return mean


def point_query_filter(
    changes: Sequence[ChangeProposal],
    query: PointQuery,
    session: Session,
    resolver: Optional[PointResolver] = None,
) -> list[ChangeProposal]:
    """Keep change proposals semantically close to the averaged query embedding.

    A change is kept iff the smaller of its two semantic angles (its footprint
    pooled on each grid vs the query embedding) is <= the query's semantic
    angle. Order and scores are preserved. A side whose pooling is degenerate
    (zero norm) is skipped; a change degenerate on both sides is dropped.
    """
    ref = query_embedding(query, session, resolver=resolver)
    projector = GridProjector(session.image_size, session.grid_size)
    kept: list[ChangeProposal] = []
    for ch in changes:
        fp = projector.footprint(ch.mask)
        angles = []
        for t in Time:
            vec = session.grid(t).values[fp.cells[:, 0], fp.cells[:, 1]].astype(np.float64).mean(axis=0)
            if float(np.linalg.norm(vec)) == 0.0:
                continue
            angles.append(_semantic_angle(ref, vec))
        if angles and min(angles) <= query.semantic_angle_deg:
            kept.append(ch)
    return kept


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


def rasterize_changes(changes: Sequence[ChangeProposal], size: tuple[int, int]) -> ChangeMap:
    """Union of the kept change masks as a pixel-level binary map."""
    raster = np.zeros(size, dtype=bool)
    for ch in changes:
        if ch.mask.size != size:
            raise ValidationError(f"change mask size {ch.mask.size} does not match map size {size}")
        raster |= decode_rle(ch.mask)
    return ChangeMap(raster=raster)


# ---------------------------------------------------------------------------
# Radiometric perturbation harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JitterReport:
    """Selection-set delta after rescaling the grids' channels.

    Uniform positive rescaling (one scalar per grid) must leave cosine-mode
    selection untouched; per-channel jitter is reported as a diagnostic with
    no pass threshold.
    """

    baseline_kept: tuple[tuple[str, int], ...]
    jittered_kept: tuple[tuple[str, int], ...]
    added: tuple[tuple[str, int], ...]
    removed: tuple[tuple[str, int], ...]
    max_abs_score_delta: float

    @property
    def selection_changed(self) -> bool:
        return bool(self.added or self.removed)


def rescale_grid_channels(grid: EmbeddingGrid, scales: np.ndarray | float) -> EmbeddingGrid:
    """Multiply each channel by a positive factor (scalar = uniform rescaling)."""
    scales = np.asarray(scales, dtype=np.float32)
    if np.any(scales <= 0):
        raise ValidationError("channel scales must be positive")
    if scales.ndim == 0:
        values = grid.values * scales
    else:
        if scales.shape != (grid.channels,):
            raise ValidationError(f"expected {grid.channels} channel scales, got shape {scales.shape}")
        values = grid.values * scales[None, None, :]
    return EmbeddingGrid(values=values, demodulated=False)


def radiometric_jitter_report(
    session: Session,
    config: MatchConfig,
    scales_t0: np.ndarray | float,
    scales_t1: np.ndarray | float,
) -> JitterReport:
    """Run the same selection on the original and channel-rescaled session and diff the kept sets."""
    jittered = replace(
        session,
        grid_t0=rescale_grid_channels(session.grid_t0, scales_t0),
        grid_t1=rescale_grid_channels(session.grid_t1, scales_t1),
    )
    base = bitemporal_latent_match(session, config)
    jit = bitemporal_latent_match(jittered, config)
    base_keys = tuple((c.source_time.value, c.proposal_id) for c in base)
    jit_keys = tuple((c.source_time.value, c.proposal_id) for c in jit)
    base_set, jit_set = set(base_keys), set(jit_keys)
    base_scores = {k: c.score for k, c in zip(base_keys, base)}
    jit_scores = {k: c.score for k, c in zip(jit_keys, jit)}
    common = base_set & jit_set
    max_delta = max((abs(base_scores[k] - jit_scores[k]) for k in common), default=0.0)
    return JitterReport(
        baseline_kept=base_keys,
        jittered_kept=jit_keys,
        added=tuple(sorted(jit_set - base_set)),
        removed=tuple(sorted(base_set - jit_set)),
        max_abs_score_delta=max_delta,
    )
