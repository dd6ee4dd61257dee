"""Retrieval (mAP / CMC) and clustering (ARI) evaluation."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

log = logging.getLogger(__name__)


@dataclass
class RetrievalSplit:
    query: np.ndarray
    gallery: np.ndarray
    identities: np.ndarray
    cameras: np.ndarray


def make_split(identities, cameras) -> RetrievalSplit:
    """First sample of every (identity, camera) pair is a query; the rest is gallery."""
    identities = np.asarray(identities)
    cameras = np.asarray(cameras)
    seen = set()
    query = []
    for i, key in enumerate(zip(identities.tolist(), cameras.tolist())):
        if key not in seen:
            seen.add(key)
            query.append(i)
    query = np.array(query, dtype=np.int64)
    gallery = np.setdiff1d(np.arange(len(identities)), query)
    return RetrievalSplit(query, gallery, identities, cameras)


def _unit(X):
    X = np.asarray(X, dtype=np.float64)
    return X / np.linalg.norm(X, axis=-1, keepdims=True)


def rank_gallery(query, gallery) -> np.ndarray:
    """Gallery positions by descending cosine similarity, ties by index."""
    sim = _unit(gallery) @ _unit(query)
    return np.argsort(-sim, kind="stable")


def average_precision(hits) -> float:
    """AP of a ranked boolean relevance vector (mean precision at each hit)."""
    hits = np.asarray(hits, dtype=bool)
    ranks = np.flatnonzero(hits) + 1
    if ranks.size == 0:
        return float("nan")
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


@dataclass
class RetrievalMetrics:
    mAP: float
    cmc1: float
    cmc5: float
    cmc10: float
    n_valid: int
    n_skipped: int

    def as_dict(self) -> dict:
        return {"mAP": self.mAP, "cmc1": self.cmc1, "cmc5": self.cmc5,
                "cmc10": self.cmc10, "n_valid": self.n_valid, "n_skipped": self.n_skipped}


def map_cmc(split: RetrievalSplit, embeddings, ranks=(1, 5, 10)) -> RetrievalMetrics:
    """Cross-camera mAP and CMC.

    Gallery entries sharing both identity and camera with the query are
    dropped before scoring. Queries left without a true match are skipped.
    """
    emb = _unit(embeddings)
    gal = split.gallery
    g_ids, g_cams = split.identities[gal], split.cameras[gal]
    sims = emb[split.query] @ emb[gal].T

    aps, first_hit = [], []
    skipped = 0
    for row, q in enumerate(split.query):
        q_id, q_cam = split.identities[q], split.cameras[q]
        order = np.argsort(-sims[row], kind="stable")
        valid = ~((g_ids[order] == q_id) & (g_cams[order] == q_cam))
        hits = g_ids[order][valid] == q_id
        if not hits.any():
            skipped += 1
            continue
        aps.append(average_precision(hits))
        first_hit.append(int(np.argmax(hits)) + 1)
    if skipped:
        log.info("%d queries without a cross-camera match were skipped", skipped)
    if not aps:
        return RetrievalMetrics(float("nan"), float("nan"), float("nan"), float("nan"), 0, skipped)
    first_hit = np.array(first_hit)
    cmc = [float(np.mean(first_hit <= r)) for r in ranks]
    return RetrievalMetrics(float(np.mean(aps)), *cmc, len(aps), skipped)


def adjusted_rand(labels_a, labels_b) -> float:
    """Adjusted Rand index; negative labels (outliers) count as singletons."""
    a = np.asarray(labels_a).copy()
    b = np.asarray(labels_b).copy()
    if a.shape != b.shape:
        raise ValueError(f"label arrays differ in length: {a.shape} vs {b.shape}")
    for lab in (a, b):
        out = lab < 0
        lab[out] = lab.max(initial=-1) + 1 + np.arange(out.sum())
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    sum_ij = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    total = comb(n, 2)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial (all singletons or one block)
        return 1.0 if sum_a == sum_b else 0.0
    return float((sum_ij - expected) / (max_index - expected))


def append_results_row(path, row: dict) -> None:
    fields = ["run_id", "config_hash", "epoch", "mAP", "cmc1", "cmc5", "cmc10", "ari"]
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerow(row)
