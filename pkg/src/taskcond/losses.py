"""Training objective for the per-task feature extractor.

The objective pulls every training embedding toward the running center of
the training set (squared-distance term) while clustering same-class
samples on the unit sphere around that center (temperature-scaled
contrastive term over mean-shifted embeddings). The center is a constant
within an epoch: no gradient flows through it, and it is recomputed from
the full training set between epochs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this norm a mean-shifted embedding has no usable direction; the
# sample is dropped from the contrastive term for that batch.
DEGENERATE_NORM = 1e-12


@dataclass
class LossConfig:
    """Feature-extractor training hyperparameters.

    ``batch_pairs`` counts same-class pairs, so one batch holds
    ``2 * batch_pairs`` images. ``steps_per_epoch=None`` covers the training
    set once per epoch in expectation. ``lr`` drives plain SGD.
    """

    tau: float = 0.25
    epochs: int = 100
    batch_pairs: int = 15
    lr: float = 1e-5
    steps_per_epoch: int | None = None
    hidden_dims: tuple = (512, 256)
    embedding_dim: int = 128

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.epochs < 0 or self.batch_pairs <= 0 or self.lr <= 0:
            raise ValueError("epochs must be >= 0, batch_pairs and lr positive")


@dataclass
class PairBatch:
    """A batch of same-class input pairs.

    ``x1[i]`` and ``x2[i]`` are two distinct samples of class
    ``class_id[i]``. ``stacked()`` interleaves them as rows
    (x1_0, x2_0, x1_1, x2_1, ...), so row i pairs with row i ^ 1.
    """

    x1: np.ndarray
    x2: np.ndarray
    class_id: np.ndarray

    def __post_init__(self):
        if self.x1.shape != self.x2.shape or len(self.x1) != len(self.class_id):
            raise ValueError("pair arrays disagree in shape")

    @property
    def n_pairs(self):
        return len(self.class_id)

    def stacked(self):
        n, d = self.x1.shape
        out = np.empty((2 * n, d), dtype=np.float64)
        out[0::2] = self.x1
        out[1::2] = self.x2
        return out


def compute_center(embeddings):
    """Elementwise mean of a non-empty stack of embedding rows."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise ValueError("need a non-empty (n, D) stack of embeddings")
    return emb.mean(axis=0)


def center_loss(phi_x, c):
    """Squared distance to the center and its gradient w.r.t. the embedding.

    Returns (||phi_x - c||^2, 2 * (phi_x - c)). The center is a constant.
    """
    phi_x = np.asarray(phi_x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if phi_x.shape != c.shape:
        raise ValueError(f"embedding shape {phi_x.shape} vs center shape {c.shape}")
    diff = phi_x - c
    return float(diff @ diff), 2.0 * diff


def mean_shift(phi_x, c):
    """Unit-norm direction of the embedding relative to the center."""
    phi_x = np.asarray(phi_x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if phi_x.shape != c.shape:
        raise ValueError(f"embedding shape {phi_x.shape} vs center shape {c.shape}")
    diff = phi_x - c
    norm = float(np.linalg.norm(diff))
    if norm < DEGENERATE_NORM:
        raise ValueError("degenerate embedding: coincides with the center")
    return diff / norm


def msic_loss(phi, c, tau):
    """Contrastive loss over mean-shifted embeddings of an interleaved pair batch.

    ``phi`` stacks the 2N embeddings so that rows i and i ^ 1 are a positive
    pair. Every row is an anchor; for anchor a with positive p the term is

        -log( exp(th_a . th_p / tau) / sum_{j != a} exp(th_a . th_j / tau) )

    where th is the mean-shifted (unit) embedding and the sum runs over all
    other rows in the batch, positive included. The batch loss is the mean
    over anchors, which keeps every term a proper -log-softmax and hence
    nonnegative. Rows whose mean shift is degenerate are dropped from the
    term entirely (no anchor, no negative).

    Returns (loss, grad) with grad taken w.r.t. ``phi`` itself, i.e. already
    chained through the mean shift.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[0] % 2 != 0:
        raise ValueError("phi must stack an even number of embedding rows")
    m = phi.shape[0]
    if m < 4:
        raise ValueError("contrastive loss needs at least 2 pairs (4 samples)")
    if tau <= 0:
        raise ValueError("tau must be positive")

    u = phi - c
    norms = np.linalg.norm(u, axis=1)
    valid = norms >= DEGENERATE_NORM
    theta = np.zeros_like(u)
    theta[valid] = u[valid] / norms[valid, None]

    partner = np.arange(m) ^ 1
    anchors = valid & valid[partner]
    n_anchors = int(anchors.sum())
    if n_anchors == 0:
        return 0.0, np.zeros_like(phi)

    sims = (theta @ theta.T) / tau
    mask = valid[None, :] & ~np.eye(m, dtype=bool)  # allowed denominator entries per row

    logits = np.where(mask, sims, -np.inf)
    row_max = logits.max(axis=1)
    exp = np.exp(logits - row_max[:, None], where=np.isfinite(logits), out=np.zeros_like(logits))
    denom = exp.sum(axis=1)
    lse = row_max + np.log(denom)

    pos = sims[np.arange(m), partner]
    per_anchor = lse - pos
    loss = float(per_anchor[anchors].mean())

    # softmax over the denominator, zeroed outside anchor rows
    P = np.zeros_like(sims)
    P[anchors] = exp[anchors] / denom[anchors, None]

    scale = 1.0 / (n_anchors * tau)
    grad_theta = P @ theta  # anchor's own-row term, nonzero only on anchor rows
    idx = np.flatnonzero(anchors)
    grad_theta[idx] -= theta[partner[idx]]
    grad_theta += P.T @ theta  # each row j collects softmax weight from every anchor
    np.add.at(grad_theta, partner[idx], -theta[idx])
    grad_theta *= scale

    # chain through the normalization: d(theta)/d(u) = (I - theta theta^T) / ||u||
    grad_phi = np.zeros_like(phi)
    radial = np.einsum("ij,ij->i", grad_theta[valid], theta[valid])
    grad_phi[valid] = (grad_theta[valid] - radial[:, None] * theta[valid]) / norms[valid, None]
    return loss, grad_phi


def total_loss(fe, batch, c, tau):
    """Full batch objective and its gradient w.r.t. the network parameters.

    Per-sample mean of the center term over all 2N images plus the
    per-anchor mean of the contrastive term, so the value is insensitive to
    batch size. Returns (loss, param_grads) with param_grads laid out like
    ``fe.params()``.
    """
    X = batch.stacked()
    phi, cache = fe.forward(X)
    u = phi - np.asarray(c, dtype=np.float64)
    center_term = float(np.einsum("ij,ij->i", u, u).mean())
    grad_phi = (2.0 / phi.shape[0]) * u
    msic_term, grad_msic = msic_loss(phi, c, tau)
    grad_phi += grad_msic
    param_grads, _ = fe.backward(cache, grad_phi)
    return center_term + msic_term, param_grads


def update_center_epoch(fe, train_inputs, chunk=4096):
    """Recompute the center as the mean embedding of the full training set."""
    X = np.asarray(train_inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty (n, d) stack of training inputs")
    total = np.zeros(fe.output_dim)
    for start in range(0, X.shape[0], chunk):
        phi, _ = fe.forward(X[start : start + chunk])
        total += phi.sum(axis=0)
    return total / X.shape[0]
