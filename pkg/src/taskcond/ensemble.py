"""Fusion of expert predictions weighted by task-membership scores.

The ensemble holds one (expert, in-domain model) pair per task seen so far.
At inference the in-domain models score the probe, the scores become
membership weights, and the fused prediction is the membership-weighted
convex combination of the experts' class-probability vectors. Stored models
are never mutated; adding a task appends a pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .experts import ExpertModel, expert_predict_batch
from .indomain import membership_batch

FUSION_MODES = ("dynamic", "equal", "manual")

# Outlier scores are inverted before the softmax; an exact zero (possible
# for a Mahalanobis query at the mean) is clamped to stay invertible.
SCORE_FLOOR = 1e-10


@dataclass
class EnsembleState:
    """Ordered per-task (expert, in-domain) registry plus fusion settings."""

    experts: list = field(default_factory=list)
    in_domain: list = field(default_factory=list)
    fusion_mode: str = "dynamic"
    beta: float = 1.0
    manual_task_id: int | None = None

    def __post_init__(self):
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion_mode!r}")

    @property
    def n_tasks(self):
        return len(self.experts)

    def add_task(self, expert: ExpertModel, in_domain_model=None):
        """Append a task's models; never touches previously stored ones."""
        self.experts.append(expert)
        self.in_domain.append(in_domain_model)


def fuse(expert_probs, m):
    """Membership-weighted sum of per-expert probability vectors.

    ``expert_probs`` stacks T probability vectors (or T (n, k) batches on
    axis 0); ``m`` has one weight per expert and sums to 1, so the result is
    again a probability vector. With a one-hot membership the result is
    bitwise the selected expert's output.
    """
    probs = np.asarray(expert_probs, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 1 or probs.shape[0] != m.shape[0]:
        raise ValueError(f"{probs.shape[0]} expert outputs vs {m.shape[0]} memberships")
    out = np.zeros_like(probs[0])
    for t in range(m.shape[0]):
        out += m[t] * probs[t]
    return out


def membership_matrix(ensemble: EnsembleState, X, manual_task_id=None):
    """(n, T) membership weights for a batch of probes under the fusion mode."""
    n = np.atleast_2d(X).shape[0]
    T = ensemble.n_tasks
    if T == 0:
        raise ValueError("empty ensemble")
    mode = ensemble.fusion_mode
    if mode == "equal":
        return np.full((n, T), 1.0 / T)
    if mode == "manual":
        tid = manual_task_id if manual_task_id is not None else ensemble.manual_task_id
        if tid is None:
            raise ValueError("manual fusion requires a task_id")
        if not (0 <= tid < T):
            raise ValueError(f"manual task_id {tid} out of range for {T} tasks")
        M = np.zeros((n, T))
        M[:, tid] = 1.0
        return M
    scores = np.empty((n, T))
    for t, indom in enumerate(ensemble.in_domain):
        if indom is None:
            raise ValueError(f"dynamic fusion needs an in-domain model for task {t}")
        scores[:, t] = indom.score_batch(X)
    return membership_batch(np.maximum(scores, SCORE_FLOOR), beta=ensemble.beta)


def predict_batch(ensemble: EnsembleState, X, manual_task_id=None):
    """Fused probabilities for a batch, with full per-task diagnostics.

    Returns (fused (n, k), memberships (n, T), per_expert (T, n, k)).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    M = membership_matrix(ensemble, X, manual_task_id=manual_task_id)
    per_expert = np.stack([expert_predict_batch(e, X) for e in ensemble.experts])
    fused = np.zeros_like(per_expert[0])
    for t in range(ensemble.n_tasks):
        fused += M[:, t : t + 1] * per_expert[t]
    return fused, M, per_expert


def predict(ensemble: EnsembleState, x, manual_task_id=None):
    """Single-probe variant of ``predict_batch``."""
    fused, M, per_expert = predict_batch(
        ensemble, np.asarray(x, dtype=np.float64)[None, :], manual_task_id=manual_task_id
    )
    return fused[0], M[0], per_expert[:, 0, :]
