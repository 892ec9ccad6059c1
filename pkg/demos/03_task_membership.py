"""Train two in-domain models and watch them assign task membership.

Each task gets its own feature extractor (trained with the center +
mean-shifted contrastive objective) and a distance measure fitted on the
resulting embedding cloud. Probes from either task are scored by both
in-domain models; inverting the scores and softmax-normalizing them yields
the membership weights that later gate the experts.
"""

import numpy as np

from taskcond.indomain import fit_in_domain, membership
from taskcond.losses import LossConfig

from _datasets import two_blob_task

rng = np.random.default_rng(2)
task_a = two_blob_task(rng, centers=((-1.5, 0.0), (1.5, 0.0)))
task_b = two_blob_task(rng, centers=((0.0, -1.5), (0.0, 1.5)))

cfg = LossConfig(tau=0.25, epochs=12, batch_pairs=8, lr=0.003,
                 hidden_dims=(32,), embedding_dim=8)
indom_a = fit_in_domain(task_a, cfg, np.random.default_rng(10), dm_kind="lof", lof_k=10)
indom_b = fit_in_domain(task_b, cfg, np.random.default_rng(11), dm_kind="lof", lof_k=10)

print("outlier scores (rows: probe origin, cols: in-domain model)")
probes_a = two_blob_task(np.random.default_rng(3), n_per_class=10,
                         centers=((-1.5, 0.0), (1.5, 0.0))).x
probes_b = two_blob_task(np.random.default_rng(4), n_per_class=10,
                         centers=((0.0, -1.5), (0.0, 1.5))).x
for name, probes in (("task A probes", probes_a), ("task B probes", probes_b)):
    sa = float(np.median(indom_a.score_batch(probes)))
    sb = float(np.median(indom_b.score_batch(probes)))
    print(f"  {name}: model A {sa:6.2f}   model B {sb:6.2f}")

print("\nper-probe membership weights, beta=5 (first five probes of each origin)")
for name, probes, true in (("A", probes_a[:5], 0), ("B", probes_b[:5], 1)):
    for x in probes:
        scores = np.array([indom_a.score(x), indom_b.score(x)])
        m = membership(scores, beta=5.0)
        mark = "ok" if int(np.argmax(m)) == true else "MISS"
        print(f"  origin {name}: scores ({scores[0]:6.2f}, {scores[1]:6.2f})"
              f"  ->  m = ({m[0]:.3f}, {m[1]:.3f})  {mark}")

hits = 0
all_probes = [(x, 0) for x in probes_a] + [(x, 1) for x in probes_b]
for x, true in all_probes:
    m = membership(np.array([indom_a.score(x), indom_b.score(x)]), beta=5.0)
    hits += int(np.argmax(m)) == true
print(f"\nmembership accuracy over {len(all_probes)} probes: "
      f"{100.0 * hits / len(all_probes):.1f}%")
