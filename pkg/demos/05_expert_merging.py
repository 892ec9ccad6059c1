"""Shrink the ensemble: distill two experts into one student, average the
in-domain models.

The model count grows linearly with tasks. To cap it, two experts can be
merged without their original training data: synthetic inputs drawn from
each expert's stored input statistics are labeled with that expert's soft
predictions, and a student of the same architecture learns from the union.
The two in-domain models are merged by averaging their outlier scores, so
the pair occupies a single slot in the membership softmax.
"""

import numpy as np

from taskcond.ensemble import EnsembleState, predict_batch
from taskcond.experts import ExpertConfig, expert_predict_batch, train_expert
from taskcond.indomain import fit_in_domain
from taskcond.losses import LossConfig
from taskcond.merge import DistillConfig, distill_merge, merge_in_domain
from taskcond.metrics import classification_accuracy

from _datasets import two_blob_task

rng = np.random.default_rng(5)
layouts = [((-2.0, 0.0), (2.0, 0.0)), ((0.0, -2.0), (0.0, 2.0)),
           ((-1.5, -1.5), (1.5, 1.5))]
train = [two_blob_task(rng, centers=c) for c in layouts]
test = [two_blob_task(np.random.default_rng(50 + i), n_per_class=30, centers=c)
        for i, c in enumerate(layouts)]

expert_cfg = ExpertConfig(hidden_dims=(32,), epochs=40, batch_size=32, lr=1e-2)
loss_cfg = LossConfig(tau=0.25, epochs=10, batch_pairs=8, lr=0.003,
                      hidden_dims=(32,), embedding_dim=8)
experts = [train_expert(train[t], expert_cfg, np.random.default_rng(60 + t), task_id=t)
           for t in range(3)]
indoms = [fit_in_domain(train[t], loss_cfg, np.random.default_rng(70 + t),
                        dm_kind="lof", lof_k=10) for t in range(3)]


def pipeline_accuracy(ens):
    accs = []
    for t in range(3):
        probs, _, _ = predict_batch(ens, test[t].x)
        accs.append(classification_accuracy(probs, test[t].class_id))
    return accs


full = EnsembleState(experts=list(experts), in_domain=list(indoms), beta=5.0)
accs = pipeline_accuracy(full)
print(f"3-slot ensemble: per-task {['%.1f' % a for a in accs]}, "
      f"avg {np.mean(accs):.2f}%")

print("\ndistilling experts for tasks 0 and 1 into one student "
      "(no original data, synthetic inputs from stored statistics) ...")
student = distill_merge(experts[0], experts[1],
                        DistillConfig(samples_per_teacher=2000, epochs=20, lr=1e-2,
                                      clip=(-6.0, 6.0)),
                        np.random.default_rng(80))
for t in (0, 1):
    agree = np.mean(
        np.argmax(expert_predict_batch(student, test[t].x), axis=1)
        == np.argmax(expert_predict_batch(experts[t], test[t].x), axis=1)
    )
    print(f"  student vs teacher {t} agreement on task {t} probes: {100 * agree:.1f}%")

merged = EnsembleState(
    experts=[student, experts[2]],
    in_domain=[merge_in_domain(indoms[0], indoms[1]), indoms[2]],
    beta=5.0,
)
accs_merged = pipeline_accuracy(merged)
print(f"\n2-slot ensemble:  per-task {['%.1f' % a for a in accs_merged]}, "
      f"avg {np.mean(accs_merged):.2f}%")
print("\none slot fewer to store and query, with the merged slot still "
      "answering for both of its constituent tasks")
