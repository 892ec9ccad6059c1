"""Gaussian distance measure: Mahalanobis distance to a fitted task cloud."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GaussianModel:
    """Mean and regularized inverse covariance of a set of embeddings."""

    mean: np.ndarray  # (D,)
    inv_cov: np.ndarray  # (D, D), inverse of (sample covariance + eps * I)
    eps: float

    @property
    def dim(self):
        return self.mean.shape[0]


def mahalanobis_fit(embeddings, eps=1e-3):
    """Fit mean and inverse covariance with eps * I ridge regularization.

    Uses the unbiased sample covariance; the inverse comes from a linear
    solve against the identity rather than an explicit inversion formula.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two embedding rows")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite embeddings")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = (centered.T @ centered) / (X.shape[0] - 1)
    cov[np.diag_indices_from(cov)] += eps
    inv_cov = np.linalg.solve(cov, np.eye(cov.shape[0]))
    inv_cov = 0.5 * (inv_cov + inv_cov.T)  # solve can break symmetry in the last ulp
    return GaussianModel(mean=mean, inv_cov=inv_cov, eps=float(eps))


def mahalanobis_score_batch(model, queries):
    """sqrt((q - mean)^T inv_cov (q - mean)) for each query row."""
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if Q.shape[1] != model.dim:
        raise ValueError(f"query dim {Q.shape[1]} does not match model dim {model.dim}")
    diff = Q - model.mean
    quad = np.einsum("ij,jk,ik->i", diff, model.inv_cov, diff)
    return np.sqrt(np.maximum(quad, 0.0))


def mahalanobis_score(model, query):
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1:
        raise ValueError("query must be a single embedding vector")
    return float(mahalanobis_score_batch(model, query[None, :])[0])
