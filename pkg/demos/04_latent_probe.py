"""
Probing the latent space: PCA rendering and semantic queries
============================================================

Renders the leading principal components of an embedding grid as RGB and
ranks proposals by embedding similarity to a query proposal, the two
probes that motivate latent matching in the first place.
"""

from pathlib import Path

import numpy as np

from changekit import fit_pca, pca_rgb, semantic_query
from changekit.images import write_rgb_png
from changekit.interchange import EmbeddingGrid, ProposalRecord, Time, encode_rle

out_dir = Path(__file__).parent / "output" / "04"
out_dir.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(3)

# a grid with three latent "materials" occupying different regions
d = 32
materials = rng.standard_normal((3, d)).astype(np.float32) * 2.0
values = np.empty((16, 16, d), dtype=np.float32)
region = np.zeros((16, 16), dtype=int)
region[:, 8:] = 1
region[10:, :8] = 2
for k in range(3):
    values[region == k] = materials[k] + 0.15 * rng.standard_normal(((region == k).sum(), d)).astype(np.float32)
grid = EmbeddingGrid(values)

basis = fit_pca(grid, components=3)
print("explained variance shares:", [round(s, 3) for s in basis.explained])
render = pca_rgb(grid, basis)
write_rgb_png(render, out_dir / "pca_rgb.png")
print(f"wrote {out_dir / 'pca_rgb.png'} (regions separate into distinct colors)")

# proposals covering each region; query one and watch its material rank first
size = (64, 64)


def block(r0, c0, r1, c1):
    dense = np.zeros(size, dtype=bool)
    dense[r0 * 4:r1 * 4, c0 * 4:c1 * 4] = True
    return encode_rle(dense)


proposals = [
    ProposalRecord(id=0, mask=block(0, 0, 8, 8), predicted_iou=0.9, stability_score=0.9,
                   source_time=Time.T0),
    ProposalRecord(id=1, mask=block(2, 2, 6, 6), predicted_iou=0.9, stability_score=0.9,
                   source_time=Time.T0),  # same material as 0
    ProposalRecord(id=2, mask=block(0, 8, 10, 16), predicted_iou=0.9, stability_score=0.9,
                   source_time=Time.T0),
    ProposalRecord(id=3, mask=block(10, 0, 16, 8), predicted_iou=0.9, stability_score=0.9,
                   source_time=Time.T0),
]
matches = semantic_query(grid, proposals, query_proposal_id=0, image_size=size)
print("\nranking against proposal 0 (top-left material):")
for m in matches:
    print(f"  id={m.record.id} similarity={m.similarity:+.4f}")
assert matches[0].record.id == 1
