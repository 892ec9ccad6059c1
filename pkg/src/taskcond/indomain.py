"""Per-task in-domain models: feature extractor plus distance measure.

An in-domain model answers "how much does this probe look like task t's
training data?" It embeds the probe with a task-specific feature extractor
and scores the embedding against the task's training cloud with an outlier
measure (LOF or Mahalanobis). Scores from all tasks' in-domain models are
inverted and softmax-normalized into membership weights.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .gaussian import GaussianModel, mahalanobis_fit, mahalanobis_score_batch
from .lof import LofIndex, lof_fit, lof_score_batch
from .losses import LossConfig, compute_center, total_loss, update_center_epoch
from .mnist import SampleSet, sample_pairs
from .nn import DenseNet, as_rng, make_optimizer, optimizer_step


def train_feature_extractor(task_train: SampleSet, cfg: LossConfig, rng):
    """Train a fresh feature extractor on one task's training inputs.

    SGD on the combined center + contrastive objective over freshly sampled
    same-class pair batches. The center starts at the mean embedding of the
    randomly initialized network and is recomputed from the full training
    set after every epoch. Returns the trained network and final center.
    """
    rng = as_rng(rng)
    for c in np.unique(task_train.class_id):
        if task_train.class_indices(c).size < 2:
            raise ValueError(f"class {c} has fewer than 2 samples; cannot form training pairs")
    if np.unique(task_train.class_id).size < 2:
        raise ValueError("need at least 2 classes to train the feature extractor")

    input_dim = task_train.x.shape[1]
    dims = (input_dim, *cfg.hidden_dims, cfg.embedding_dim)
    fe = DenseNet.init(dims, rng)
    center = update_center_epoch(fe, task_train.x)
    steps = cfg.steps_per_epoch
    if steps is None:
        steps = max(1, int(np.ceil(task_train.n / (2 * cfg.batch_pairs))))
    opt = make_optimizer("sgd", cfg.lr)
    for _ in range(cfg.epochs):
        for _ in range(steps):
            batch = sample_pairs(task_train, cfg.batch_pairs, rng)
            _, grads = total_loss(fe, batch, center, cfg.tau)
            optimizer_step(opt, fe.params(), grads)
        fe.assert_finite()
        center = update_center_epoch(fe, task_train.x)
    return fe, center


def embed(fe, center, x):
    """Embeddings of x under the extractor (center is carried, not applied)."""
    phi, _ = fe.forward(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return phi


@dataclass
class InDomainModel:
    """Feature extractor, its training-set center, and a fitted distance measure.

    ``fingerprint`` hashes the extractor parameters and center at fit time;
    it ties the distance measure to the exact embedding map that produced
    its training cloud.
    """

    fe: DenseNet
    center: np.ndarray
    dm: object  # LofIndex or GaussianModel
    embedding_dim: int
    fingerprint: str

    def score_batch(self, X):
        """Outlier score of each probe row (higher = less in-domain)."""
        phi = embed(self.fe, self.center, X)
        if isinstance(self.dm, LofIndex):
            return lof_score_batch(self.dm, phi)
        if isinstance(self.dm, GaussianModel):
            return mahalanobis_score_batch(self.dm, phi)
        raise TypeError(f"unsupported distance measure {type(self.dm).__name__}")

    def score(self, x):
        return float(self.score_batch(np.asarray(x, dtype=np.float64)[None, :])[0])

    @property
    def dm_kind(self):
        return "lof" if isinstance(self.dm, LofIndex) else "mahalanobis"


def in_domain_fingerprint(fe, center):
    h = hashlib.sha256()
    for arr in fe.params():
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(center, dtype="<f8").tobytes())
    return h.hexdigest()


def fit_in_domain(task_train: SampleSet, cfg: LossConfig, rng, dm_kind="lof",
                  lof_k=20, mahalanobis_eps=1e-3, lof_subsample=None):
    """Train the feature extractor and fit the chosen distance measure.

    The distance measure is fitted on the embeddings of the full task
    training set (both classes jointly). ``lof_subsample``, when set, caps
    the number of embeddings indexed by LOF (seeded, off by default).
    """
    rng = as_rng(rng)
    fe, center = train_feature_extractor(task_train, cfg, rng)
    phi = embed(fe, center, task_train.x)
    if dm_kind == "lof":
        if lof_subsample is not None and lof_subsample < phi.shape[0]:
            keep = rng.choice(phi.shape[0], size=lof_subsample, replace=False)
            keep.sort()
            phi_fit = phi[keep]
        else:
            phi_fit = phi
        dm = lof_fit(phi_fit, k=lof_k)
    elif dm_kind == "mahalanobis":
        dm = mahalanobis_fit(phi, eps=mahalanobis_eps)
    else:
        raise ValueError(f"unknown distance measure kind {dm_kind!r}")
    return InDomainModel(
        fe=fe,
        center=center,
        dm=dm,
        embedding_dim=cfg.embedding_dim,
        fingerprint=in_domain_fingerprint(fe, center),
    )


def membership(outlier_scores, beta=1.0):
    """Softmax over inverted outlier scores: one weight per task expert.

    m = softmax(beta * (1/s_1, ..., 1/s_T)). Scores must be strictly
    positive; clamp upstream where a measure can return an exact zero.
    """
    s = np.asarray(outlier_scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("outlier_scores must be a non-empty vector")
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise ValueError("outlier scores must be positive and finite")
    if beta <= 0:
        raise ValueError("beta must be positive")
    z = beta / s
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def membership_batch(score_matrix, beta=1.0):
    """Row-wise membership for an (n, T) matrix of outlier scores."""
    S = np.asarray(score_matrix, dtype=np.float64)
    if S.ndim != 2 or S.shape[1] == 0:
        raise ValueError("score matrix must be (n, T) with T >= 1")
    if np.any(S <= 0) or not np.all(np.isfinite(S)):
        raise ValueError("outlier scores must be positive and finite")
    z = beta / S
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def write_embeddings(path, sample_ids, task_ids, classes, embeddings, delimiter=","):
    """Write rows of ``sample_id,task_id,class,e_0,...,e_{D-1}``."""
    emb = np.asarray(embeddings, dtype=np.float64)
    n, d = emb.shape
    header = "sample_id,task_id,class," + ",".join(f"e_{j}" for j in range(d))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header.replace(",", delimiter) + "\n")
        for i in range(n):
            front = f"{int(sample_ids[i])}{delimiter}{int(task_ids[i])}{delimiter}{int(classes[i])}"
            tail = delimiter.join(repr(float(v)) for v in emb[i])
            fh.write(front + delimiter + tail + "\n")
