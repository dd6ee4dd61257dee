"""Epoch loop: re-cluster the memory, train on PK batches, refresh memory."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import css_attention as css
from .clustering import OUTLIER, ClusterConfig, PseudoLabeling, relabel_epoch
from .errors import ConfigError, TrainingAbort
from .losses import (LossWeights, base_loss, cacc_loss, casc_loss, cluster_centroids,
                     memory_camera_centers, total_loss)
from .memory_bank import MemoryBank
from .synth_data import Dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    P: int = 8
    K: int = 8
    iters_per_epoch: int = 0
    lr: float = 3.5e-4
    lr_decay_every: int = 20
    lr_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    momentum: float = 0.2
    reduction: int = 4
    cluster: ClusterConfig = ClusterConfig()
    weights: LossWeights = LossWeights()
    use_css: bool = True
    use_cacc: bool = True
    cacc_anchor: str = "center"
    seed: int = 0

    def validate(self) -> None:
        if self.P * self.K != self.batch_size:
            raise ConfigError(f"P*K = {self.P * self.K} != batch_size = {self.batch_size}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.cacc_anchor not in ("center", "sample"):
            raise ConfigError(f"cacc_anchor must be 'center' or 'sample', got {self.cacc_anchor!r}")
        if not 0 <= self.momentum <= 1:
            raise ConfigError(f"momentum must lie in [0, 1], got {self.momentum}")
        self.weights.validate()

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule: multiply by ``lr_decay`` every ``lr_decay_every`` epochs."""
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam, applied in place to every entry of ``params``."""
    for name, g in grads.items():
        if name in params and not np.all(np.isfinite(g)):
            raise TrainingAbort(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


# -- sampler -----------------------------------------------------------------

def sample_batches(labels, P: int, K: int, rng, n_batches: int = 0) -> list[np.ndarray]:
    """Identity-balanced batches of ``P`` pseudo classes x ``K`` instances.

    One pass visits every cluster at least once; extra passes are appended
    until ``n_batches`` batches exist. Classes smaller than ``K`` are drawn
    with replacement. Outliers are never sampled.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels[labels != OUTLIER])
    if classes.size == 0:
        raise TrainingAbort("no clusters to sample from")
    if classes.size < P:
        log.info("only %d clusters for P=%d; lowering P", classes.size, P)
        P = classes.size
    members = {k: np.flatnonzero(labels == k) for k in classes}

    per_pass = math.ceil(classes.size / P)
    total = max(per_pass, n_batches)
    batches = []
    while len(batches) < total:
        perm = rng.permutation(classes)
        for start in range(0, perm.size, P):
            chunk = perm[start:start + P]
            if chunk.size < P:
                rest = np.setdiff1d(classes, chunk)
                chunk = np.concatenate([chunk, rng.choice(rest, P - chunk.size, replace=False)])
            batch = [rng.choice(members[k], K, replace=members[k].size < K) for k in chunk]
            batches.append(np.concatenate(batch))
    return batches[:total]


# -- training ----------------------------------------------------------------

@dataclass
class EpochReport:
    epoch: int
    lr: float
    n_clusters: int
    n_outliers: int
    n_iters: int
    base: float
    sep: float
    cacc: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


class Trainer:
    """Holds model parameters, memory bank and optimizer for one run.

    Only camera ids are visible here; ground-truth identities are left to
    evaluation code.
    """

    def __init__(self, cfg: TrainConfig, dataset: Dataset):
        cfg.validate()
        self.cfg = cfg
        self.maps = dataset.maps
        self.cameras = np.asarray(dataset.cameras)
        self.n_cams = dataset.n_cams
        C = dataset.maps.shape[-1]
        self.rng = np.random.default_rng(cfg.seed)
        init_rng = np.random.default_rng([cfg.seed, 1])
        self.params = css.init_params(C, dataset.n_cams, cfg.reduction, init_rng)
        self.buffers = css.init_buffers(C)
        self.adam = AdamState()
        self.bank: MemoryBank | None = None
        self.epoch = 0
        self.iteration = 0
        self.history: list[EpochReport] = []
        self.iter_log: list[dict] = []
        self.labeling: PseudoLabeling | None = None

    # inference -----------------------------------------------------------
    def embed(self, maps=None, chunk: int = 256) -> np.ndarray:
        maps = self.maps if maps is None else maps
        out = [css.css_forward(maps[s:s + chunk], self.params, self.buffers, "eval",
                               self.cfg.use_css).f_agnostic
               for s in range(0, len(maps), chunk)]
        return np.concatenate(out)

    def masks(self, maps=None, chunk: int = 256) -> np.ndarray:
        maps = self.maps if maps is None else maps
        return np.concatenate([css.attention_mask(maps[s:s + chunk].astype(np.float64), self.params)
                               for s in range(0, len(maps), chunk)])

    def init_bank(self) -> None:
        self.bank = MemoryBank(self.embed(), self.cfg.momentum)

    # one batch -------------------------------------------------------------
    def _step(self, idx, labels, lr):
        cfg, w = self.cfg, self.cfg.weights
        out = css.css_forward(self.maps[idx], self.params, self.buffers, "train", cfg.use_css)
        f = out.f_agnostic
        y, cams = labels[idx], self.cameras[idx]
        snap = self.bank.snapshot()

        base, d_f = base_loss(f, y, cluster_centroids(snap, labels), w.tau_base)

        cacc = 0.0
        if cfg.use_cacc:
            mem_centers = memory_camera_centers(snap, labels, self.cameras)
            fn = cacc_loss if cfg.cacc_anchor == "center" else casc_loss
            cacc, d_cacc = fn(f, y, cams, mem_centers, w)
            d_f = d_f + w.lambda_cacc * d_cacc

        sep, d_sp, fc_grads = 0.0, None, {}
        if cfg.use_css:
            sep, fc_grads, d_sp = css.sep_loss(out.f_specific, cams, self.params)
            d_sp = w.lambda_sep * d_sp

        grads = css.css_backward(out, self.params, d_f, d_sp)
        for name, g in fc_grads.items():
            grads[name] = grads[name] + w.lambda_sep * g

        adam_step(self.params, grads, self.adam, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.buffers.update(out.new_buffers)
        for i, fi in zip(idx, f):
            self.bank.update_slot(int(i), fi)

        return base, sep, cacc, total_loss(base, sep, cacc, w)

    def train_epoch(self) -> EpochReport:
        if self.bank is None:
            self.init_bank()
        cfg = self.cfg
        lr = lr_at(cfg, self.epoch)
        labeling = relabel_epoch(self.bank.snapshot(), cfg.cluster)
        if labeling.n_clusters == 0:
            raise TrainingAbort(f"epoch {self.epoch}: clustering produced no clusters")
        self.labeling = labeling

        batches = sample_batches(labeling.labels, cfg.P, cfg.K, self.rng, cfg.iters_per_epoch)
        sums = np.zeros(4)
        for idx in batches:
            vals = self._step(idx, labeling.labels, lr)
            sums += vals
            self.iter_log.append({
                "iteration": self.iteration, "epoch": self.epoch,
                "base": vals[0], "sep": vals[1], "cacc": vals[2], "total": vals[3],
            })
            self.iteration += 1

        means = sums / len(batches)
        report = EpochReport(self.epoch, lr, labeling.n_clusters, labeling.n_outliers,
                             len(batches), *map(float, means))
        log.info("epoch %d: %d clusters, %d outliers, total %.4f",
                 self.epoch, report.n_clusters, report.n_outliers, report.total)
        self.history.append(report)
        self.epoch += 1
        return report

    def fit(self, on_epoch=None):
        """Train until ``cfg.epochs``; ``on_epoch(trainer, report)`` after each epoch."""
        if self.bank is None:
            self.init_bank()
        while self.epoch < self.cfg.epochs:
            report = self.train_epoch()
            if on_epoch is not None:
                on_epoch(self, report)
        return self.params, self.bank, self.history


def fit(cfg: TrainConfig, dataset: Dataset, on_epoch=None):
    trainer = Trainer(cfg, dataset)
    trainer.fit(on_epoch)
    return trainer
