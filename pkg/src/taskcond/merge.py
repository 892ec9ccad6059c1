"""Scalability path: collapse two tasks' models into one slot.

The two expert models are merged by data-free distillation: synthetic
inputs drawn from each teacher's stored input statistics are labeled with
that teacher's soft predictions, and a student with the same architecture
is trained on the union. The two in-domain models are merged by averaging
their outlier scores with equal weight, so the merged unit occupies a
single slot in the membership softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .experts import (
    ExpertConfig,
    ExpertModel,
    InputStats,
    _fit,
    expert_predict_batch,
)
from .nn import DenseNet, as_rng


@dataclass
class DistillConfig:
    samples_per_teacher: int = 10_000
    epochs: int = 4
    batch_size: int = 128
    optimizer: str = "adam"
    lr: float = 1e-3
    clip: tuple = (0.0, 1.0)  # synthetic inputs stay in the input domain

    def as_expert_config(self):
        return ExpertConfig(
            hidden_dims=(),  # unused: the student copies the teacher architecture
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            lr=self.lr,
        )


def synthesize_inputs(stats: InputStats, n, rng, clip=(0.0, 1.0)):
    """Per-dimension Gaussian draws from stored input statistics, clipped."""
    rng = as_rng(rng)
    X = rng.normal(loc=stats.mean, scale=np.maximum(stats.std, 0.0),
                   size=(n, stats.mean.shape[0]))
    return np.clip(X, clip[0], clip[1])


def distill_merge(teacher_a: ExpertModel, teacher_b: ExpertModel, cfg: DistillConfig,
                  rng) -> ExpertModel:
    """Train a student expert that imitates two teachers on synthetic data.

    Teachers are never modified. The student shares the teachers'
    architecture and minimizes cross-entropy against the soft targets of
    whichever teacher generated each synthetic sample. Deterministic given
    the seed.
    """
    rng = as_rng(rng)
    if teacher_a.class_count != teacher_b.class_count:
        raise ValueError("teachers must share a class space")
    for name, teacher in (("a", teacher_a), ("b", teacher_b)):
        if teacher.stats is None:
            raise ValueError(f"teacher {name} has no stored input statistics")
    n = cfg.samples_per_teacher
    Xa = synthesize_inputs(teacher_a.stats, n, rng, clip=cfg.clip)
    Xb = synthesize_inputs(teacher_b.stats, n, rng, clip=cfg.clip)
    X = np.concatenate([Xa, Xb], axis=0)
    targets = np.concatenate(
        [expert_predict_batch(teacher_a, Xa), expert_predict_batch(teacher_b, Xb)], axis=0
    )
    order = rng.permutation(X.shape[0])
    X, targets = X[order], targets[order]

    dims = tuple(layer.in_dim for layer in teacher_a.net.layers) + (teacher_a.net.output_dim,)
    student_net = DenseNet.init(dims, rng)
    _fit(student_net, X, targets, cfg.as_expert_config(), rng)
    merged_stats = InputStats(
        mean=0.5 * (teacher_a.stats.mean + teacher_b.stats.mean),
        std=0.5 * (teacher_a.stats.std + teacher_b.stats.std),
    )
    return ExpertModel(
        net=student_net,
        class_count=teacher_a.class_count,
        task_id=min(teacher_a.task_id, teacher_b.task_id),
        stats=merged_stats,
    )


@dataclass
class MergedInDomain:
    """Equal-weight average of two in-domain models' outlier scores.

    Each constituent keeps its own feature extractor, so the embedding
    dimensions need not agree. Symmetric in its constituents.
    """

    a: object
    b: object
    weight: float = 0.5

    def score_batch(self, X):
        return self.weight * self.a.score_batch(X) + (1.0 - self.weight) * self.b.score_batch(X)

    def score(self, x):
        return float(self.score_batch(np.asarray(x, dtype=np.float64)[None, :])[0])

    @property
    def dm_kind(self):
        return "merged"


def merge_in_domain(dm_a, dm_b) -> MergedInDomain:
    return MergedInDomain(a=dm_a, b=dm_b)
