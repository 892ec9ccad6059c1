"""Evaluation metrics for the sequential protocol.

Accuracies are percentages. The stage-by-task accuracy matrix R has
R[i][j] = accuracy on task j's test set after finishing training stage i
(0-based indices; only j <= i is defined for a sequential run).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def average_accuracy(per_task_acc):
    acc = np.asarray(per_task_acc, dtype=np.float64)
    if acc.size == 0:
        raise ValueError("need at least one accuracy value")
    return float(acc.mean())


def backward_transfer(R):
    """Mean change in old-task accuracy between its own stage and the last.

    BWT = mean over tasks j < T-1 of (R[T-1][j] - R[j][j]). Negative values
    mean forgetting. All required entries must be present (not NaN).
    """
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape[0] < 2:
        raise ValueError("R must be a square matrix with T >= 2")
    T = R.shape[0]
    final = R[T - 1, : T - 1]
    diag = np.diag(R)[: T - 1]
    if np.any(np.isnan(final)) or np.any(np.isnan(diag)):
        raise ValueError("missing accuracy entries required for backward transfer")
    return float((final - diag).mean())


def tdr_at_fdr(bonafide_scores, attack_scores, fdr_target):
    """True detection rate at a bonafide false-detection budget.

    Higher scores mean more attack-like. The threshold is the smallest
    candidate value t such that the fraction of bonafide scores >= t does
    not exceed ``fdr_target`` (a percentage); detection also uses >=, so a
    sample tied with the threshold counts as detected. Candidates are the
    observed scores plus a sentinel above the maximum, which makes a
    zero-detection threshold always available.
    """
    b = np.asarray(bonafide_scores, dtype=np.float64)
    a = np.asarray(attack_scores, dtype=np.float64)
    if b.size == 0 or a.size == 0:
        raise ValueError("score lists must be non-empty")
    if not (0.0 <= fdr_target <= 100.0):
        raise ValueError("fdr_target is a percentage in [0, 100]")
    candidates = np.unique(np.concatenate([b, a]))
    candidates = np.append(candidates, candidates[-1] + 1.0)
    b_sorted = np.sort(b)
    # count of bonafide >= t for each candidate t
    ge_counts = b.size - np.searchsorted(b_sorted, candidates, side="left")
    ok = 100.0 * ge_counts / b.size <= fdr_target
    threshold = candidates[int(np.argmax(ok))]  # first (smallest) valid candidate
    return float(100.0 * np.count_nonzero(a >= threshold) / a.size)


@dataclass
class MembershipReport:
    """Task-identification accuracy plus histogram data of own-task weights."""

    accuracy: float  # percent of probes whose argmax membership is their true task
    bin_edges: np.ndarray  # (bins + 1,) uniform edges on [0, 1]
    counts_by_task: np.ndarray  # (T, bins) histogram of m[true_task] per true task


def membership_report(membership_rows, true_task, n_tasks, bins=50):
    """Summarize per-probe membership vectors against true task labels.

    ``membership_rows`` is (n, T); ``true_task`` gives each probe's task.
    Ties in the argmax resolve to the lowest index. The histograms bin the
    weight each probe assigned to its own task's expert.
    """
    M = np.asarray(membership_rows, dtype=np.float64)
    t = np.asarray(true_task, dtype=np.int64)
    if M.ndim != 2 or M.shape[0] != t.shape[0]:
        raise ValueError("membership rows and true task labels disagree")
    hits = np.argmax(M, axis=1) == t
    accuracy = float(100.0 * hits.mean()) if M.shape[0] else 0.0
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts = np.zeros((n_tasks, bins), dtype=np.int64)
    own = M[np.arange(M.shape[0]), t]
    for task in range(n_tasks):
        counts[task] = np.histogram(own[t == task], bins=edges)[0]
    return MembershipReport(accuracy=accuracy, bin_edges=edges, counts_by_task=counts)


def classification_accuracy(probs, class_id):
    """Percent of rows whose argmax probability matches the label."""
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(class_id)
    if probs.shape[0] != y.shape[0] or probs.shape[0] == 0:
        raise ValueError("probs and labels disagree or are empty")
    return float(100.0 * (np.argmax(probs, axis=1) == y).mean())
