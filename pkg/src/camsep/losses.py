"""Contrastive objectives over memory and batch embeddings.

Every loss returns ``(value, d_embeddings)``: the analytic gradient w.r.t.
the batch embeddings it consumes. Memory-derived centers are constants.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .clustering import OUTLIER
from .errors import ConfigError, DegenerateCenterError

log = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-8


@dataclass(frozen=True)
class LossWeights:
    lambda_sep: float = 0.4
    lambda_cacc: float = 1.0
    tau_base: float = 0.05
    tau_cacc: float = 0.07
    n_negatives: int = 50
    include_own_camera: bool = True

    def validate(self) -> None:
        if self.lambda_sep < 0 or self.lambda_cacc < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.tau_base <= 0 or self.tau_cacc <= 0:
            raise ConfigError("temperatures must be positive")
        if self.n_negatives < 1:
            raise ConfigError(f"n_negatives must be >= 1, got {self.n_negatives}")


@dataclass(frozen=True)
class CameraCenter:
    class_id: int
    camera_id: int
    vector: np.ndarray
    member_count: int


@dataclass
class CenterSet:
    """Unit-normalized (class, camera) centers, one row per center."""

    classes: np.ndarray
    cameras: np.ndarray
    vectors: np.ndarray
    counts: np.ndarray
    members: list | None = None
    raw_norms: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self):
        for k, c, v, n in zip(self.classes, self.cameras, self.vectors, self.counts):
            yield CameraCenter(int(k), int(c), v, int(n))


def _group_centers(X, labels, cams, strict):
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    cams = np.asarray(cams)
    keep = labels != OUTLIER
    pairs = sorted(set(zip(labels[keep].tolist(), cams[keep].tolist())))
    classes, cameras, vectors, counts, members, norms = [], [], [], [], [], []
    for k, c in pairs:
        idx = np.flatnonzero((labels == k) & (cams == c))
        mean = X[idx].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < DEGENERATE_NORM:
            if strict:
                raise DegenerateCenterError(
                    f"camera center (class {k}, camera {c}) has zero-length mean"
                )
            continue
        classes.append(k)
        cameras.append(c)
        vectors.append(mean / norm)
        counts.append(len(idx))
        members.append(idx)
        norms.append(norm)
    d = X.shape[1]
    return CenterSet(
        np.array(classes, dtype=np.int64), np.array(cameras, dtype=np.int64),
        np.array(vectors).reshape(-1, d), np.array(counts, dtype=np.int64),
        members, np.array(norms),
    )


def memory_camera_centers(snapshot, labels, cams) -> CenterSet:
    """Mean memory slot per (pseudo class, camera), unit-normalized."""
    return _group_centers(snapshot, labels, cams, strict=False)


def batch_camera_centers(f, labels, cams) -> CenterSet:
    """Mean batch embedding per (pseudo class, camera), unit-normalized.

    Raises :class:`DegenerateCenterError` if a group averages to zero.
    """
    return _group_centers(f, labels, cams, strict=True)


def batch_centers_backward(centers: CenterSet, d_centers, n_samples):
    """Map gradients on center vectors back to the member embeddings."""
    d = centers.vectors.shape[1]
    d_f = np.zeros((n_samples, d))
    for g, (p, norm, idx) in enumerate(zip(centers.vectors, centers.raw_norms, centers.members)):
        d_mean = (d_centers[g] - p * (p @ d_centers[g])) / norm
        d_f[idx] += d_mean / len(idx)
    return d_f


def cluster_centroids(snapshot, labels) -> np.ndarray:
    """Unit-normalized mean memory slot for each pseudo class ``0..K-1``."""
    X = np.asarray(snapshot, dtype=np.float64)
    labels = np.asarray(labels)
    K = int(labels.max()) + 1 if np.any(labels != OUTLIER) else 0
    C = np.zeros((K, X.shape[1]))
    for k in range(K):
        C[k] = X[labels == k].mean(axis=0)
    return C / np.linalg.norm(C, axis=1, keepdims=True)


def base_loss(f, labels, centroids, tau: float = 0.05):
    """InfoNCE of each embedding against all cluster centroids."""
    f = np.asarray(f, dtype=np.float64)
    labels = np.asarray(labels)
    B = f.shape[0]
    logits = f @ centroids.T / tau
    lse = logsumexp(logits, axis=1)
    loss = float(np.mean(lse - logits[np.arange(B), labels]))
    prob = np.exp(logits - lse[:, None])
    prob[np.arange(B), labels] -= 1.0
    return loss, prob @ centroids / (tau * B)


def _anchored_loss(anchors, anchor_classes, anchor_cams, mem: CenterSet,
                   tau, n_negatives, include_own_camera):
    """Per-anchor camera-aware contrast, averaged over usable anchors.

    For an anchor of class k the positives are the memory centers of class
    k, the negatives the ``n_negatives`` most similar centers of other
    classes. Returns ``(loss, d_anchors)``.
    """
    d_anchors = np.zeros_like(anchors)
    terms = []
    for a, (v, k, c) in enumerate(zip(anchors, anchor_classes, anchor_cams)):
        pos = mem.classes == k
        if not include_own_camera:
            pos &= mem.cameras != c
        if not pos.any():
            log.warning("anchor of class %d has no positive memory center; skipped", k)
            continue
        g_pos = mem.vectors[pos]
        g_neg = mem.vectors[mem.classes != k]
        s_pos = g_pos @ v / tau
        s_neg = g_neg @ v / tau
        if len(s_neg) > n_negatives:
            top = np.argsort(-s_neg, kind="stable")[:n_negatives]
            g_neg, s_neg = g_neg[top], s_neg[top]

        # row i: [s_pos_i, s_neg_1 .. s_neg_J]
        S = np.concatenate([s_pos[:, None], np.broadcast_to(s_neg, (len(s_pos), len(s_neg)))], axis=1)
        lse = logsumexp(S, axis=1)
        terms.append(np.mean(lse - s_pos))
        w = np.exp(S - lse[:, None])
        G = len(s_pos)
        grad = -(1.0 - w[:, 0]) @ g_pos
        if len(s_neg):
            grad = grad + w[:, 1:].sum(axis=0) @ g_neg
        d_anchors[a] = grad / (G * tau)

    if not terms:
        return 0.0, d_anchors
    n = len(terms)
    return float(np.sum(terms) / n), d_anchors / n


def cacc_loss(f, labels, cams, mem_centers: CenterSet, weights: LossWeights = LossWeights()):
    """Contrast batch camera centers against memory camera centers.

    Returns ``(loss, d_f)`` with gradients flowing through the batch centers.
    """
    f = np.asarray(f, dtype=np.float64)
    centers = batch_camera_centers(f, labels, cams)
    loss, d_p = _anchored_loss(
        centers.vectors, centers.classes, centers.cameras, mem_centers,
        weights.tau_cacc, weights.n_negatives, weights.include_own_camera)
    return loss, batch_centers_backward(centers, d_p, f.shape[0])


def casc_loss(f, labels, cams, mem_centers: CenterSet, weights: LossWeights = LossWeights()):
    """Sample-anchored variant: every batch embedding is its own anchor."""
    f = np.asarray(f, dtype=np.float64)
    return _anchored_loss(
        f, np.asarray(labels), np.asarray(cams), mem_centers,
        weights.tau_cacc, weights.n_negatives, weights.include_own_camera)


def total_loss(base: float, sep: float, cacc: float, weights: LossWeights = LossWeights()) -> float:
    return base + weights.lambda_sep * sep + weights.lambda_cacc * cacc
