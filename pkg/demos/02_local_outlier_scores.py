"""Why a density-ratio outlier score instead of distance to the center.

Build a training set of two clusters with very different densities and
score a probe that sits between them. By plain distance-to-center the probe
looks like an inlier (it is closer to the center than most members) but its
local neighborhood is far sparser than its neighbors', so its density-ratio
score is well above 1. Scores near 1 mean "as dense as the neighbors".
"""

import numpy as np

from taskcond.lof import lof_fit, lof_score

rng = np.random.default_rng(1)

tight = rng.normal(loc=(-5.0, 0.0), scale=0.1, size=(80, 2))
loose = rng.normal(loc=(5.0, 0.0), scale=1.0, size=(80, 2))
train = np.concatenate([tight, loose])
probe = np.array([0.0, 0.0])

center = train.mean(axis=0)
probe_dist = np.linalg.norm(probe - center)
member_dists = np.linalg.norm(train - center, axis=1)
print(f"distance to center: probe {probe_dist:.2f} vs member median "
      f"{np.median(member_dists):.2f}  ->  a global test would call it an inlier")

index = lof_fit(train, k=20)
print(f"\nlocal outlier factor of the probe: {lof_score(index, probe):.2f}  (>> 1: outlier)")

for name, pts in (("tight-cluster member", tight[0]),
                  ("loose-cluster member", loose[0])):
    print(f"local outlier factor of a {name}: {lof_score(index, pts):.2f}")

print("\nscores scattered across space:")
for y in (0.0, 2.0):
    row = []
    for x in (-5.0, -2.5, 0.0, 2.5, 5.0):
        row.append(f"({x:+.0f},{y:+.0f})={lof_score(index, np.array([x, y])):6.1f}")
    print("  " + "  ".join(row))

print("\nthe probe between the clusters is locally rare even though it is "
      "central, which is exactly the membership signal the ensemble needs")
