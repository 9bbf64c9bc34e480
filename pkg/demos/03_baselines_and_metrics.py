"""
Comparison methods and the evaluation protocol
==============================================

Builds a pair with four known objects, one of which actually changes, runs
latent matching against the CVA / mask-match / CVA-match baselines, and
scores everything with pixel F1/precision/recall and mask AR.
"""

import numpy as np

from changekit import (
    ChangeMap,
    MatchConfig,
    bitemporal_latent_match,
    cva_change_map,
    cva_match,
    mask_ar,
    mask_match,
    pixel_prf,
    rasterize_changes,
)
from changekit.interchange import EmbeddingGrid, ProposalRecord, Session, Time, encode_rle
from changekit.metrics import format_eval_table

rng = np.random.default_rng(7)
d = 16
size = (64, 64)

# four 2x2-cell objects on an 8x8 grid; object 0 flips direction at T1
directions = rng.standard_normal((5, d)).astype(np.float32) * 2.0
blocks = [(0, 0), (0, 6), (6, 0), (6, 6)]
g0 = np.tile(directions[4], (8, 8, 1)).astype(np.float32)
for k, (r, c) in enumerate(blocks):
    g0[r:r + 2, c:c + 2] = directions[k]
g1 = g0.copy()
g1[0:2, 0:2] = -directions[0]  # the change


def block_mask(r, c):
    dense = np.zeros(size, dtype=bool)
    dense[r * 8:(r + 2) * 8, c * 8:(c + 2) * 8] = True
    return encode_rle(dense)


def proposals(t):
    return tuple(
        ProposalRecord(id=k, mask=block_mask(r, c), predicted_iou=0.9, stability_score=0.9,
                       source_time=t)
        for k, (r, c) in enumerate(blocks)
    )


session = Session(
    image_size=size,
    grid_t0=EmbeddingGrid(g0),
    grid_t1=EmbeddingGrid(g1),
    proposals_t0=proposals(Time.T0),
    proposals_t1=proposals(Time.T1),
)

gt_dense = np.zeros(size, dtype=bool)
gt_dense[0:16, 0:16] = True  # object 0's pixels
gt = ChangeMap(raster=gt_dense)
gt_instances = [encode_rle(gt_dense)]

rows = []
matched = bitemporal_latent_match(
    session, MatchConfig(mode="angle_threshold", angle_threshold_deg=155.0))
rows.append(("latent match", rasterize_changes(matched, size), matched))

_, cva_map = cva_change_map(session.grid_t0, session.grid_t1, size)
rows.append(("cva", cva_map, None))

mm = mask_match(session)  # identical geometry both times: finds nothing
rows.append(("mask match", rasterize_changes(mm, size), mm))

cm = cva_match(session)  # pixel votes over the cva map recover the object
rows.append(("cva match", rasterize_changes(cm, size), cm))

print(f"{'method':<14}{'F1':>7}{'Prec':>7}{'Rec':>7}{'AR':>7}{'kept':>6}")
for name, cmap, instances in rows:
    rep = pixel_prf(cmap, gt)
    ar = mask_ar(instances, gt_instances).ar if instances is not None else float("nan")
    kept = len(instances) if instances is not None else -1
    print(f"{name:<14}{rep.f1:7.3f}{rep.precision:7.3f}{rep.recall:7.3f}{ar:7.3f}{kept:6d}")

print("\nlatent match caught the changed object at both times; pure geometric")
print("matching (mask match) is blind to it because the masks never moved.")

micro = pixel_prf(rows[0][1], gt)
print()
print(format_eval_table(micro, None, mask_ar(matched, gt_instances).ar, n_pairs=1))
