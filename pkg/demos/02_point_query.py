"""
Object-centric change detection with point queries
==================================================

The two-cluster session puts four objects per time on orthogonal semantic
axes (clusters A and B) and flips every object's direction at T1, so all
eight proposals are maximal changes. A single click on an A object filters
the class-agnostic change set down to the A-cluster changes.
"""

from changekit import MatchConfig, PointQuery, bitemporal_latent_match, point_query_filter
from changekit.synthetic import cluster_query_point, cluster_session

session = cluster_session()
changes = bitemporal_latent_match(
    session, MatchConfig(mode="angle_threshold", angle_threshold_deg=155.0))
print(f"class-agnostic changes at 155deg: {len(changes)}")
for c in changes:
    print(f"  {c.source_time.value} id={c.proposal_id} angle={c.angle_deg:.1f}deg")

x, y, t = cluster_query_point(session, "A")
print(f"\nclick at ({x:.0f}, {y:.0f}) on an A-cluster object at {t.value}")

one = point_query_filter(
    changes, PointQuery(points=((x, y, t),), semantic_angle_deg=45.0), session)
print(f"1-point query, 45deg semantic angle: kept {len(one)}")
for c in one:
    print(f"  {c.source_time.value} id={c.proposal_id}")

# widening the semantic angle re-admits the other cluster (90deg away)
wide = point_query_filter(
    changes, PointQuery(points=((x, y, t),), semantic_angle_deg=120.0), session)
print(f"1-point query, 120deg semantic angle: kept {len(wide)} (cross-cluster re-admitted)")

# repeated identical clicks are a no-op on the mean embedding
three = point_query_filter(
    changes, PointQuery(points=((x, y, t),) * 3, semantic_angle_deg=45.0), session)
assert three == one
print("3 identical clicks == 1 click (mean of identical embeddings)")
