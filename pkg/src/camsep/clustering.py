"""Pseudo-labels from a memory snapshot.

Pipeline: Euclidean distances -> k-reciprocal encoding -> Jaccard distance
-> DBSCAN on the precomputed matrix. Outliers are labelled ``OUTLIER``.
"""
from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError

log = logging.getLogger(__name__)

OUTLIER = -1


@dataclass(frozen=True)
class ClusterConfig:
    eps: float = 0.5
    min_pts: int = 4
    k1: int = 30
    k2: int = 6
    lambda_rr: float = 0.0
    expansion: bool = True


@dataclass
class PseudoLabeling:
    labels: np.ndarray
    n_clusters: int

    @property
    def n_outliers(self) -> int:
        return int(np.sum(self.labels == OUTLIER))

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


def pairwise_euclidean(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    # cdist evaluates each pair independently, so the result is exactly
    # symmetric with an exact zero diagonal
    return cdist(X, X)


def _ranking(D):
    """Row-wise neighbour order with self first, ties by ascending index."""
    R = np.array(D, dtype=np.float64, copy=True)
    np.fill_diagonal(R, -np.inf)
    return np.argsort(R, axis=1, kind="stable")


def _reciprocal(order, i, k):
    fwd = order[i, : k + 1]
    back = order[fwd, : k + 1]
    return fwd[(back == i).any(axis=1)]


def k_reciprocal_jaccard(D, k1: int = 30, k2: int = 6, expansion: bool = True,
                         lambda_rr: float = 0.0) -> np.ndarray:
    """Jaccard distance between k-reciprocal encodings of every sample.

    ``kNN(i, k)`` is sample ``i`` followed by its ``k`` nearest neighbours.
    ``k2`` counts rows averaged during local smoothing, self included, so
    ``k2 = 1`` turns smoothing off. ``lambda_rr`` blends the original
    distance back in (0 gives the pure Jaccard matrix).
    """
    D = np.asarray(D, dtype=np.float64)
    N = D.shape[0]
    if not 1 <= k2 <= k1 < N:
        raise ConfigError(f"need 1 <= k2 <= k1 < N, got k1={k1}, k2={k2}, N={N}")
    order = _ranking(D)
    half = int(np.around(k1 / 2))

    R_full = [_reciprocal(order, i, k1) for i in range(N)]
    R_half = [_reciprocal(order, i, half) for i in range(N)] if expansion else None

    V = np.zeros((N, N))
    for i in range(N):
        expanded = R_full[i]
        if expansion:
            for j in R_full[i]:
                cand = R_half[j]
                if len(np.intersect1d(cand, R_full[i])) >= 2.0 / 3.0 * len(cand):
                    expanded = np.union1d(expanded, cand)
        expanded = np.unique(expanded)
        w = np.exp(-D[i, expanded])
        V[i, expanded] = w / w.sum()

    if k2 > 1:
        V = V[order[:, :k2]].mean(axis=1)

    J = np.empty((N, N))
    for i in range(N):
        inter = np.minimum(V[i], V).sum(axis=1)
        union = np.maximum(V[i], V).sum(axis=1)
        J[i] = 1.0 - inter / union
    np.clip(J, 0.0, 1.0, out=J)
    np.fill_diagonal(J, 0.0)
    if lambda_rr:
        J = (1.0 - lambda_rr) * J + lambda_rr * D
    return J


def dbscan(D, eps: float, min_pts: int) -> PseudoLabeling:
    """DBSCAN on a precomputed distance matrix.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Seeds are visited in ascending index order and clusters
    are grown breadth-first, so a border point joins the earliest-created
    cluster that reaches it.
    """
    if eps <= 0:
        raise ConfigError(f"eps must be > 0, got {eps}")
    if min_pts < 1:
        raise ConfigError(f"min_pts must be >= 1, got {min_pts}")
    D = np.asarray(D)
    N = D.shape[0]
    neighbours = [np.flatnonzero(D[i] <= eps) for i in range(N)]
    core = np.array([len(nb) >= min_pts for nb in neighbours], dtype=bool)

    labels = np.full(N, OUTLIER, dtype=np.int64)
    n_clusters = 0
    for seed in range(N):
        if labels[seed] != OUTLIER or not core[seed]:
            continue
        labels[seed] = n_clusters
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in neighbours[p]:
                if labels[q] == OUTLIER:
                    labels[q] = n_clusters
                    queue.append(q)
        n_clusters += 1
    return PseudoLabeling(labels, n_clusters)


def relabel_epoch(snapshot, cfg: ClusterConfig = ClusterConfig()) -> PseudoLabeling:
    """Cluster a memory snapshot into pseudo-labels.

    ``k1`` is clamped to ``N - 1`` (and ``k2`` to ``k1``) for tiny inputs.
    """
    X = np.asarray(snapshot)
    N = X.shape[0]
    k1 = min(cfg.k1, N - 1)
    k2 = min(cfg.k2, k1)
    if (k1, k2) != (cfg.k1, cfg.k2):
        log.debug("clamped k1/k2 to %d/%d for N=%d", k1, k2, N)
    D = pairwise_euclidean(X)
    J = k_reciprocal_jaccard(D, k1, k2, expansion=cfg.expansion, lambda_rr=cfg.lambda_rr)
    labeling = dbscan(J, cfg.eps, cfg.min_pts)
    log.info("relabel: %d clusters, %d outliers", labeling.n_clusters, labeling.n_outliers)
    return labeling


def dump_labeling(path, labeling: PseudoLabeling) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "pseudo_label"])
        for i, y in enumerate(labeling.labels):
            w.writerow([i, int(y)])
