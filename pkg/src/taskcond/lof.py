"""Local outlier factor in novelty mode.

Queries are scored against a fixed set of training embeddings and are never
inserted into the index. A score near 1 means the query sits at a density
similar to its neighbors; scores well above 1 mark local outliers, points
whose local density is much lower than that of their nearest training
points. Distances are Euclidean throughout and neighborhoods include
distance ties, so a neighborhood can hold more than k points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Guards the reachability-mean denominator so duplicate-heavy data yields a
# large finite density instead of a division by zero.
LRD_EPS = 1e-10


@dataclass
class LofIndex:
    """Fitted index: training points plus their k-distances and densities."""

    points: np.ndarray  # (n, D)
    k: int
    kdist: np.ndarray  # (n,) distance to the k-th nearest other training point
    lrd: np.ndarray  # (n,) local reachability density, positive and finite

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def _sq_dists(A, B, B_sq):
    """Squared Euclidean distances between rows of A and rows of B."""
    sq = np.einsum("ij,ij->i", A, A)[:, None] + B_sq[None, :] - 2.0 * (A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


def lof_fit(embeddings, k, chunk=2048):
    """Build a LOF index over training embeddings with neighbor count k.

    Requires n > k >= 1. Per point this computes the k-distance (ties
    included in the neighborhood), reachability distances
    max(kdist(o), d(p, o)) to each neighbor o, and the local reachability
    density 1 / (mean reachability + eps).
    """
    X = np.ascontiguousarray(embeddings, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("embeddings must be a (n, D) matrix")
    n = X.shape[0]
    if not (1 <= k < n):
        raise ValueError(f"need n > k >= 1, got n={n}, k={k}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite embeddings")

    X_sq = np.einsum("ij,ij->i", X, X)
    kdist = np.empty(n)
    nb_ids = [None] * n
    nb_dists = [None] * n
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = np.sqrt(_sq_dists(X[start:stop], X, X_sq))
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf  # exclude self
        kth = np.partition(d, k - 1, axis=1)[:, k - 1]
        kdist[start:stop] = kth
        for row in range(stop - start):
            ids = np.flatnonzero(d[row] <= kth[row])
            nb_ids[start + row] = ids
            nb_dists[start + row] = d[row, ids]

    lrd = np.empty(n)
    for i in range(n):
        reach = np.maximum(kdist[nb_ids[i]], nb_dists[i])
        lrd[i] = 1.0 / (reach.mean() + LRD_EPS)
    return LofIndex(points=X, k=k, kdist=kdist, lrd=lrd)


def lof_score_batch(index, queries, chunk=1024):
    """LOF of each query row against the fitted training set.

    Each query's neighborhood is its k nearest training points (ties
    included). The score is mean(lrd of neighbors) / lrd(query), where the
    query's lrd uses reachability to those same neighbors.
    """
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if Q.shape[1] != index.dim:
        raise ValueError(f"query dim {Q.shape[1]} does not match index dim {index.dim}")
    X, k = index.points, index.k
    X_sq = np.einsum("ij,ij->i", X, X)
    out = np.empty(Q.shape[0])
    for start in range(0, Q.shape[0], chunk):
        stop = min(start + chunk, Q.shape[0])
        d = np.sqrt(_sq_dists(Q[start:stop], X, X_sq))
        kth = np.partition(d, k - 1, axis=1)[:, k - 1]
        for row in range(stop - start):
            mask = d[row] <= kth[row]
            reach = np.maximum(index.kdist[mask], d[row, mask])
            lrd_q = 1.0 / (reach.mean() + LRD_EPS)
            out[start + row] = index.lrd[mask].mean() / lrd_q
    return out


def lof_score(index, query):
    """LOF of a single query embedding (see ``lof_score_batch``)."""
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1:
        raise ValueError("query must be a single embedding vector")
    return float(lof_score_batch(index, query[None, :])[0])
