"""Layer-norm demodulation: strip the encoder's final affine transform.

The encoder's last layer normalization standardizes each position vector
across channels and then applies a per-channel affine (scale w, shift b).
Inverting it, z = (f(x) - b) / w, restores zero channel mean and an l2 norm
of sqrt(d_m) at every position, putting all embeddings on one hypersphere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MEAN_TOL = 1e-3
NORM_RTOL = 1e-2


@dataclass(frozen=True)
class DemodulationParams:
    """Per-channel affine (w; b) read from the encoder's final normalization layer."""

    scale: np.ndarray  # w, shape (d_m,)
    shift: np.ndarray  # b, shape (d_m,)

    def __post_init__(self) -> None:
        if self.scale.shape != self.shift.shape or self.scale.ndim != 1:
            raise ValueError("scale and shift must be 1-D and equal length")
        if np.any(np.abs(self.scale) <= 1e-12):
            raise ValueError("demodulation scale has a zero component")


@dataclass(frozen=True)
class DemodulatedGrid:
    """Demodulated embedding grid plus degeneracy bookkeeping."""

    values: np.ndarray  # (He, We, d_m) float32
    degenerate_positions: int  # positions that came out all-zero (norm check waived there)


def demodulate(encoder_output: np.ndarray, params: DemodulationParams) -> DemodulatedGrid:
    """z = (f(x) - b) / w elementwise per channel."""
    if encoder_output.ndim != 3:
        raise ValueError(f"encoder output must be (He, We, d_m), got {encoder_output.shape}")
    if encoder_output.shape[2] != params.scale.shape[0]:
        raise ValueError(
            f"channel mismatch: output has {encoder_output.shape[2]}, params have {params.scale.shape[0]}"
        )
    z = (encoder_output.astype(np.float64) - params.shift) / params.scale
    norms = np.linalg.norm(z, axis=2)
    degenerate = int(np.count_nonzero(norms == 0.0))
    return DemodulatedGrid(values=z.astype(np.float32), degenerate_positions=degenerate)


def demodulation_residual(grid: np.ndarray) -> tuple[float, float]:
    """(max |channel mean|, max relative norm deviation from sqrt(d_m)).

    All-zero positions are skipped on the norm side; they are degenerate by
    construction, not demodulation failures.
    """
    v = grid.astype(np.float64)
    d = v.shape[2]
    max_mean = float(np.abs(v.mean(axis=2)).max())
    norms = np.linalg.norm(v, axis=2)
    target = np.sqrt(d)
    live = norms > 0.0
    if not live.any():
        return max_mean, 0.0
    max_norm_dev = float(np.abs(norms[live] - target).max() / target)
    return max_mean, max_norm_dev


def check_demodulated(grid: np.ndarray) -> bool:
    """True when every live position meets the mean/norm tolerances."""
    max_mean, max_norm_dev = demodulation_residual(grid)
    return max_mean <= MEAN_TOL and max_norm_dev <= NORM_RTOL
