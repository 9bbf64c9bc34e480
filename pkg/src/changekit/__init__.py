"""changekit: zero-shot change detection by bitemporal latent matching.

Core pipeline: load a session (two embedding grids + two proposal sets),
pool each proposal's footprint on both grids, score the pair by negative
cosine similarity, select by top-k / angle threshold / Otsu, and optionally
narrow to an object class with a point query. Baselines, pixel and instance
metrics, a CLI, and an HTTP service share the same primitives.
"""

from .baselines import cva_change_map, cva_match, image_as_grid, mask_match, otsu_threshold
from .errors import (
    DemodulationWarning,
    EngineError,
    FormatError,
    UnresolvablePointError,
    ValidationError,
)
from .interchange import (
    EmbeddingGrid,
    ProposalRecord,
    RleMask,
    Session,
    SessionManifest,
    Time,
    decode_rle,
    encode_rle,
    load_session,
    read_proposals,
    read_tensor_archive,
    write_proposals,
    write_tensor_archive,
)
from .matching import (
    ChangeMap,
    ChangeProposal,
    MatchConfig,
    PointQuery,
    bitemporal_latent_match,
    change_score,
    compute_candidates,
    point_query_filter,
    radiometric_jitter_report,
    rasterize_changes,
    resolve_point_to_proposal,
)
from .metrics import InstanceReport, PixelReport, binarize_gt, mask_ar, pixel_prf
from .probe import PcaBasis, fit_pca, pca_rgb, semantic_query
from .proposal import (
    GridFootprint,
    MaskEmbedding,
    mask_embedding,
    mask_iou,
    nms,
    project_mask_to_grid,
    quality_filter,
)

__version__ = "0.1.0"

__all__ = [
    "ChangeMap",
    "ChangeProposal",
    "DemodulationWarning",
    "EmbeddingGrid",
    "EngineError",
    "FormatError",
    "GridFootprint",
    "InstanceReport",
    "MaskEmbedding",
    "MatchConfig",
    "PcaBasis",
    "PixelReport",
    "PointQuery",
    "ProposalRecord",
    "RleMask",
    "Session",
    "SessionManifest",
    "Time",
    "UnresolvablePointError",
    "ValidationError",
    "binarize_gt",
    "bitemporal_latent_match",
    "change_score",
    "compute_candidates",
    "cva_change_map",
    "cva_match",
    "decode_rle",
    "encode_rle",
    "fit_pca",
    "image_as_grid",
    "load_session",
    "mask_ar",
    "mask_embedding",
    "mask_iou",
    "mask_match",
    "nms",
    "otsu_threshold",
    "pca_rgb",
    "pixel_prf",
    "point_query_filter",
    "project_mask_to_grid",
    "quality_filter",
    "radiometric_jitter_report",
    "rasterize_changes",
    "read_proposals",
    "read_tensor_archive",
    "resolve_point_to_proposal",
    "semantic_query",
    "write_proposals",
    "write_tensor_archive",
]
