import numpy as np
import pytest

from changekit.errors import ValidationError
from changekit.interchange import EmbeddingGrid, ProposalRecord, Time, encode_rle
from changekit.probe import fit_pca, pca_rgb, project_grid, semantic_query
from changekit.synthetic import walsh_vectors


def grid_of(points, shape_hw):
    """Arrange a (n, d) point cloud into an (h, w, d) grid."""
    h, w = shape_hw
    arr = np.asarray(points, dtype=np.float32).reshape(h, w, -1)
    return EmbeddingGrid(arr)


def rect(size, r0, c0, r1, c1):
    dense = np.zeros(size, dtype=bool)
    dense[r0:r1, c0:c1] = True
    return encode_rle(dense)


def record(mask, pid):
    return ProposalRecord(id=pid, mask=mask, predicted_iou=0.9, stability_score=0.9, source_time=Time.T0)


# --------------------------------------------------------------------- fit_pca

def test_pca_rank1_line():
    direction = np.array([3.0, 4.0, 0.0]) / 5.0
    ts = np.linspace(-2, 2, 16)
    cloud = np.outer(ts, direction)
    basis = fit_pca(grid_of(cloud, (4, 4)), components=1)
    assert basis.explained[0] == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(np.abs(basis.directions[0] @ direction), 1.0, atol=1e-8)
    # sign convention: largest-magnitude coordinate positive
    pivot = np.argmax(np.abs(basis.directions[0]))
    assert basis.directions[0][pivot] > 0


def test_pca_matches_eigh_oracle(rng):
    # known covariance: eigenvalues 4, 1, 0.25 along rotated axes
    d = 6
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.array([4.0, 1.0, 0.25, 0.0, 0.0, 0.0])
    n = 4000
    coords = rng.standard_normal((n, d)) * np.sqrt(lam)
    cloud = coords @ q.T
    grid = grid_of(cloud, (50, 80))
    basis = fit_pca(grid, components=3)

    # oracle: closed-form eigendecomposition of the empirical covariance
    data = cloud - cloud.mean(axis=0)
    cov = data.T @ data / n
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    for i in range(3):
        assert basis.explained[i] == pytest.approx(w[i] / w.sum(), rel=1e-6)
        assert abs(float(basis.directions[i] @ v[:, i])) == pytest.approx(1.0, abs=1e-6)
    # orthonormal within 1e-6
    gram = basis.directions @ basis.directions.T
    assert np.allclose(gram, np.eye(3), atol=1e-6)
    # explained shares non-increasing
    assert list(basis.explained) == sorted(basis.explained, reverse=True)


def test_pca_isotropic_two_equal_eigenvalues(rng):
    # planar isotropic cloud: shares ~0.5 each, directions orthonormal in the plane
    n = 5000
    cloud = np.zeros((n, 4))
    cloud[:, 0] = rng.standard_normal(n)
    cloud[:, 1] = rng.standard_normal(n)
    basis = fit_pca(grid_of(cloud, (50, 100)), components=2)
    assert basis.explained[0] == pytest.approx(0.5, abs=0.05)
    assert basis.explained[1] == pytest.approx(0.5, abs=0.05)
    gram = basis.directions @ basis.directions.T
    assert np.allclose(gram, np.eye(2), atol=1e-6)
    # both directions live in the (e0, e1) plane
    assert np.allclose(basis.directions[:, 2:], 0.0, atol=1e-6)


def test_pca_constant_grid_rank_deficient():
    grid = EmbeddingGrid(np.ones((4, 4, 3), dtype=np.float32))
    with pytest.raises(ValidationError, match="rank-deficient"):
        fit_pca(grid)


def test_pca_rank_deficient_partial():
    # rank-1 cloud cannot produce 3 components
    ts = np.linspace(-1, 1, 16)
    cloud = np.outer(ts, [1.0, 0.0, 0.0, 0.0])
    with pytest.raises(ValidationError, match="rank-deficient"):
        fit_pca(grid_of(cloud, (4, 4)), components=3)


def test_pca_mean_projects_to_origin(rng):
    cloud = rng.standard_normal((64, 5)) + 3.0
    grid = grid_of(cloud, (8, 8))
    basis = fit_pca(grid, components=3)
    coords = (basis.mean - basis.mean) @ basis.directions.T
    assert np.allclose(coords, 0.0)


def test_pca_deterministic(rng):
    cloud = rng.standard_normal((64, 8))
    g = grid_of(cloud, (8, 8))
    b1 = fit_pca(g)
    b2 = fit_pca(g)
    assert np.array_equal(b1.directions, b2.directions)
    assert b1.explained == b2.explained


# --------------------------------------------------------------------- pca_rgb

def test_pca_rgb_rank1_constant_channels(rng):
    # rank-3 grid fitted, rendered onto a basis from a rank-1 grid is not the
    # contract; instead: rank-1 data under a 1-component fit padded is invalid.
    # The documented behavior: channels with no variance render as 0.
    ts = np.linspace(-2, 2, 16)
    direction = np.array([1.0, 2.0, -1.0, 0.5])
    cloud = np.outer(ts, direction) + 0.01 * rng.standard_normal((16, 4))
    grid = grid_of(cloud, (4, 4))
    basis = fit_pca(grid, components=3)
    img = pca_rgb(grid, basis)
    assert img.shape == (4, 4, 3)
    assert img.dtype == np.uint8
    # channel 1 dominates the dynamic range; channels 2/3 carry only noise
    assert img[:, :, 0].max() == 255


def test_pca_rgb_exact_rank1_zero_channels():
    # an exactly rank-1 cloud renders with channels 2 and 3 mapped to 0
    from changekit.probe import fit_pca_auto

    ts = np.linspace(-2, 2, 16)
    cloud = np.outer(ts, [1.0, 2.0, -1.0, 0.5])
    grid = grid_of(cloud, (4, 4))
    basis = fit_pca_auto(grid, max_components=3)
    assert basis.directions.shape[0] == 1
    img = pca_rgb(grid, basis)
    assert img[:, :, 0].max() == 255
    assert not img[:, :, 1].any()
    assert not img[:, :, 2].any()


def test_fit_pca_auto_constant_still_fails():
    from changekit.probe import fit_pca_auto

    with pytest.raises(ValidationError, match="rank-deficient"):
        fit_pca_auto(EmbeddingGrid(np.ones((4, 4, 3), dtype=np.float32)))


def test_pca_rgb_roundtrip_residual(rng):
    cloud = rng.standard_normal((64, 6))
    grid = grid_of(cloud, (8, 8))
    basis = fit_pca(grid, components=3)
    coords = project_grid(grid, basis)
    # residual after removing the projection is orthogonal to the basis
    data = grid.values.reshape(-1, 6).astype(np.float64) - basis.mean
    recon = coords.reshape(-1, 3) @ basis.directions
    residual = data - recon
    # orthogonality is only as tight as the basis' 1e-6 orthonormality contract
    assert np.allclose(residual @ basis.directions.T, 0.0, atol=1e-4)


def test_pca_rgb_two_cluster_bimodal(rng):
    d = 8
    a = np.zeros(d); a[0] = 3.0
    b = np.zeros(d); b[0] = -3.0
    cloud = np.concatenate([
        a + 0.05 * rng.standard_normal((32, d)),
        b + 0.05 * rng.standard_normal((32, d)),
    ])
    grid = grid_of(cloud, (8, 8))
    basis = fit_pca(grid, components=3)
    img = pca_rgb(grid, basis)
    ch1 = img[:, :, 0].ravel().astype(float)
    # bimodal: the two cluster populations sit at the extremes
    assert ((ch1 < 64).sum(), (ch1 > 191).sum()) == (32, 32)


# --------------------------------------------------------------- semantic_query

def _cluster_setup():
    d = 16
    u = walsh_vectors(d, 4)
    size = (32, 32)
    grid_vals = np.tile(u[2], (8, 8, 1)).astype(np.float32)
    # two A-objects, two B-objects on separate 2x2 cell blocks; the second
    # object of each cluster is slightly rotated so only an exact duplicate
    # reaches similarity 1.0
    grid_vals[0:2, 0:2] = u[0]
    grid_vals[0:2, 6:8] = u[0] + 0.3 * u[3]
    grid_vals[6:8, 0:2] = u[1]
    grid_vals[6:8, 6:8] = u[1] + 0.3 * u[3]
    grid = EmbeddingGrid(grid_vals)
    masks = {
        0: rect(size, 0, 0, 8, 8),
        1: rect(size, 0, 24, 8, 32),
        2: rect(size, 24, 0, 32, 8),
        3: rect(size, 24, 24, 32, 32),
    }
    proposals = [record(m, pid) for pid, m in masks.items()]
    return grid, proposals


def test_query_duplicate_ranked_first():
    grid, proposals = _cluster_setup()
    dup = record(proposals[0].mask, 99)
    matches = semantic_query(grid, proposals + [dup], query_proposal_id=0)
    assert matches[0].record.id == 99
    assert matches[0].similarity == pytest.approx(1.0)


def test_query_cluster_ordering():
    grid, proposals = _cluster_setup()
    matches = semantic_query(grid, proposals, query_proposal_id=0)
    # the same-cluster object (id 1) ranks above both cross-cluster ones
    assert matches[0].record.id == 1
    assert {m.record.id for m in matches[1:]} == {2, 3}
    assert matches[0].similarity > matches[1].similarity


def test_query_top_n_clamp():
    grid, proposals = _cluster_setup()
    assert len(semantic_query(grid, proposals, 0, top_n=100)) == 3
    assert len(semantic_query(grid, proposals, 0, top_n=2)) == 2


def test_query_cross_time():
    grid, proposals = _cluster_setup()
    other_grid, other_proposals = _cluster_setup()
    matches = semantic_query(grid, proposals, 0, cross=(other_grid, other_proposals))
    # the query itself exists in the cross pool: similarity 1 at rank 1
    assert matches[0].record.id == 0
    assert matches[0].similarity == pytest.approx(1.0)


def test_query_missing_id():
    grid, proposals = _cluster_setup()
    with pytest.raises(ValidationError, match="not present"):
        semantic_query(grid, proposals, query_proposal_id=42)


def test_query_scale_invariant_ranking(rng):
    grid, proposals = _cluster_setup()
    scaled = EmbeddingGrid(grid.values * np.float32(7.5))
    a = [m.record.id for m in semantic_query(grid, proposals, 0)]
    b = [m.record.id for m in semantic_query(scaled, proposals, 0)]
    assert a == b
