import math

import numpy as np
import pytest

from changekit_export.demodulate import (
    DemodulationParams,
    check_demodulated,
    demodulate,
    demodulation_residual,
)


def walsh(d, count):
    i = np.arange(d)
    h = np.where(np.array([[bin(a & b).count("1") % 2 for b in i] for a in i]) == 0, 1.0, -1.0)
    return h[1 : count + 1]


def test_identity_params():
    rng = np.random.default_rng(0)
    raw = rng.standard_normal((3, 3, 8)).astype(np.float32)
    params = DemodulationParams(scale=np.ones(8), shift=np.zeros(8))
    out = demodulate(raw, params)
    assert np.allclose(out.values, raw, atol=1e-7)


def test_constant_shift_gives_zero_grid_flagged_degenerate():
    d = 8
    b = np.arange(1.0, d + 1.0)
    raw = np.tile(b, (4, 4, 1)).astype(np.float32)
    params = DemodulationParams(scale=np.full(d, 2.0), shift=b)
    out = demodulate(raw, params)
    assert np.all(out.values == 0.0)
    assert out.degenerate_positions == 16
    # the norm check is waived for all-zero positions
    max_mean, max_norm_dev = demodulation_residual(out.values)
    assert max_mean == 0.0 and max_norm_dev == 0.0


def test_exact_reconstruction_dyadic():
    """f = w*u + b with dyadic w, integer b, +-1 u: demodulation recovers u exactly."""
    d = 16
    u_rows = walsh(d, 3)
    u = np.stack([u_rows[0], u_rows[1], u_rows[2], -u_rows[0]]).reshape(2, 2, d)
    w = np.array([0.5, 1.0, 2.0, 4.0] * 4)
    b = np.arange(-8.0, 8.0)
    raw = (w * u + b).astype(np.float32)
    out = demodulate(raw, DemodulationParams(scale=w, shift=b))
    assert np.array_equal(out.values, u.astype(np.float32))  # elementwise exact


def test_reconstruction_general_within_tolerance():
    rng = np.random.default_rng(5)
    d = 32
    u = rng.standard_normal((6, 6, d))
    u -= u.mean(axis=2, keepdims=True)
    u /= np.linalg.norm(u, axis=2, keepdims=True) / math.sqrt(d)
    w = rng.uniform(0.5, 1.5, size=d)
    b = rng.normal(0, 3, size=d)
    raw = (w * u + b).astype(np.float64)
    out = demodulate(raw, DemodulationParams(scale=w, shift=b))
    assert np.allclose(out.values, u, atol=1e-5)
    assert check_demodulated(out.values)


def test_acceptance_demodulation_tolerances():
    """Exported-grid contract: per-position |mean| < 1e-3and norm within 1e-2*sqrt(d)."""
    rng = np.random.default_rng(11)
    d = 64
    u = rng.standard_normal((8, 8, d))
    u -= u.mean(axis=2, keepdims=True)
    u /= np.linalg.norm(u, axis=2, keepdims=True) / math.sqrt(d)
    w = rng.uniform(0.25, 2.0, size=d)
    b = rng.normal(0, 5, size=d)
    out = demodulate((w * u + b).astype(np.float32), DemodulationParams(scale=w, shift=b))
    max_mean, max_norm_dev = demodulation_residual(out.values)
    assert max_mean < 1e-3
    assert max_norm_dev < 1e-2


def test_zero_scale_rejected():
    with pytest.raises(ValueError, match="zero"):
        DemodulationParams(scale=np.array([1.0, 0.0]), shift=np.zeros(2))


def test_channel_mismatch():
    params = DemodulationParams(scale=np.ones(4), shift=np.zeros(4))
    with pytest.raises(ValueError, match="channel"):
        demodulate(np.zeros((2, 2, 8), dtype=np.float32), params)
