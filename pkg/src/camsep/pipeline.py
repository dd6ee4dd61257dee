"""Run-level helpers shared by the CLI, the demos and the acceptance tests."""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .eval_metrics import adjusted_rand, make_split, map_cmc
from .synth_data import Dataset, dataset_checksum, generate_dataset, load_dataset
from .trainer import Trainer

log = logging.getLogger(__name__)

CHECKPOINT = "checkpoint.ckpt"
TRAIN_LOG = "train_log.jsonl"
EPOCH_LOG = "epochs.jsonl"
METRICS = "metrics.csv"
METRIC_FIELDS = ["run_id", "config_hash", "epoch", "mAP", "cmc1", "cmc5", "cmc10", "ari"]

# (row name, overrides) in the order of the component ablation table
ABLATION_ROWS = [
    ("baseline", dict(use_css=False, use_cacc=False)),
    ("+css", dict(use_css=True, use_cacc=False)),
    ("+cacc", dict(use_css=False, use_cacc=True, cacc_anchor="center")),
    ("+css+cacc", dict(use_css=True, use_cacc=True, cacc_anchor="center")),
    ("casc(sample)", dict(use_css=True, use_cacc=True, cacc_anchor="sample")),
    ("cacc(center)", dict(use_css=True, use_cacc=True, cacc_anchor="center")),
]


def resolve_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset:
        return load_dataset(cfg.dataset)
    if cfg.data is not None:
        return generate_dataset(cfg.data)
    raise FileNotFoundError("config names neither [run] dataset nor a [data] section")


def evaluate(trainer: Trainer, dataset: Dataset, labeling=None) -> dict:
    split = make_split(dataset.identities, dataset.cameras)
    metrics = map_cmc(split, trainer.embed(dataset.maps)).as_dict()
    labeling = labeling if labeling is not None else trainer.labeling
    if labeling is not None:
        metrics["ari"] = adjusted_rand(labeling.labels, dataset.identities)
    return metrics


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def train_run(cfg: RunConfig, dataset: Dataset, out_dir, resume: bool = False) -> Trainer:
    """Train with per-epoch checkpoint, JSON-lines logs and metrics CSV.

    With ``resume`` an existing checkpoint in ``out_dir`` is continued; a
    finished run is returned untouched.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / CHECKPOINT
    chash = cfg.hash()

    if resume and ckpt.exists():
        trainer = load_checkpoint(ckpt, dataset, cfg.train)
        if trainer.epoch >= cfg.train.epochs:
            log.info("run already finished at epoch %d; nothing to do", trainer.epoch)
            return trainer
    else:
        for name in (TRAIN_LOG, EPOCH_LOG, METRICS):
            (out / name).unlink(missing_ok=True)
        trainer = Trainer(cfg.train, dataset)
        trainer.init_bank()
        save_checkpoint(ckpt, trainer)

    def on_epoch(tr: Trainer, report):
        with open(out / TRAIN_LOG, "a") as fh:
            for rec in tr.iter_log:
                fh.write(json.dumps({k: _fmt(v) for k, v in rec.items()}) + "\n")
        tr.iter_log.clear()
        with open(out / EPOCH_LOG, "a") as fh:
            fh.write(json.dumps({k: _fmt(v) for k, v in report.as_dict().items()}) + "\n")
        if (report.epoch + 1) % cfg.eval_every == 0 or tr.epoch == cfg.train.epochs:
            m = evaluate(tr, dataset)
            new = not (out / METRICS).exists()
            with open(out / METRICS, "a", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore")
                if new:
                    w.writeheader()
                w.writerow({"run_id": cfg.run_id, "config_hash": chash,
                            "epoch": report.epoch, **{k: _fmt(v) for k, v in m.items()}})
        save_checkpoint(ckpt, tr)

    trainer.fit(on_epoch)
    return trainer


def run_ablation(cfg: RunConfig, dataset: Dataset, out_dir) -> list[dict]:
    """Train every ablation row with a shared seed; one result dict per row."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checksum = dataset_checksum(dataset)
    rows = []
    for name, overrides in ABLATION_ROWS:
        row_cfg = replace(cfg, train=replace(cfg.train, **overrides), run_id=f"{cfg.run_id}:{name}")
        row = {"row": name, "use_css": row_cfg.train.use_css, "use_cacc": row_cfg.train.use_cacc,
               "cacc_anchor": row_cfg.train.cacc_anchor, "dataset_sha256": checksum,
               "config_hash": row_cfg.hash(), "mAP": "", "cmc1": "", "ari": "", "error": ""}
        try:
            tr = train_run(row_cfg, dataset, out / name.replace("+", "plus_").replace("(", "_").rstrip(")"))
            m = evaluate(tr, dataset)
            row.update(mAP=m["mAP"], cmc1=m["cmc1"], ari=m.get("ari", ""))
        except Exception as exc:  # a failed row is recorded, the sweep goes on
            log.error("ablation row %s failed: %s", name, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)

    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    return rows


def export_masks(path, masks) -> None:
    """Write attention masks as CSV rows ``sample_index,h,w,c,mask``."""
    masks = np.asarray(masks)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "h", "w", "c", "mask"])
        for idx in np.ndindex(*masks.shape):
            w.writerow([*idx, repr(float(masks[idx]))])


def run_dir(cfg: RunConfig) -> str:
    return os.path.join(cfg.out_dir, cfg.run_id)

