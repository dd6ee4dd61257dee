"""Command-line entry point: gen-data, train, eval, grad-check, ablate.

Exit codes: 0 ok, 1 verification failure or aborted run, 2 config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import load_config, with_overrides
from .errors import ConfigError, DatasetFormatError, TrainingAbort, ValidationError
from .gradcheck import TOLERANCE, run_all
from .pipeline import (CHECKPOINT, evaluate, export_masks, resolve_dataset, run_ablation,
                       run_dir, train_run)
from .synth_data import dataset_checksum, generate_dataset, load_dataset, save_dataset

log = logging.getLogger("camsep")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, require_data=True)
    data = cfg.data
    if args.seed is not None:
        data = replace(data, seed=args.seed)
    out = args.out or cfg.dataset or str(Path(cfg.out_dir) / "dataset.bin")
    ds = generate_dataset(data)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(out, ds)
    n, (h, w, c) = len(ds), ds.shape
    print(f"wrote {out}: N={n} n_ids={ds.n_ids} n_cams={ds.n_cams} H={h} W={w} C={c} "
          f"sha256={dataset_checksum(ds)[:16]}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = with_overrides(load_config(args.config), args.seed, args.epochs, args.out)
    dataset = resolve_dataset(cfg)
    out = run_dir(cfg)
    trainer = train_run(cfg, dataset, out, resume=args.resume)
    for r in trainer.history[-1:]:
        print(f"epoch {r.epoch}: clusters={r.n_clusters} outliers={r.n_outliers} "
              f"total={r.total:.4f} lr={r.lr:g}")
    print(f"checkpoint: {Path(out) / CHECKPOINT} (epoch {trainer.epoch}, config {cfg.hash()})")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config) if args.config else None
    if args.dataset:
        dataset = load_dataset(args.dataset)
    elif cfg is not None:
        dataset = resolve_dataset(cfg)
    else:
        raise ConfigError("eval needs --dataset or --config")
    ckpt = args.checkpoint or (str(Path(run_dir(cfg)) / CHECKPOINT) if cfg else None)
    if ckpt is None:
        raise ConfigError("eval needs --checkpoint or --config")
    trainer = load_checkpoint(ckpt, dataset)
    metrics = evaluate(trainer, dataset, labeling=None)
    metrics["checkpoint"] = str(ckpt)
    metrics["epoch"] = trainer.epoch
    text = json.dumps(metrics, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    if args.masks:
        export_masks(args.masks, trainer.masks())
    return EXIT_OK


def cmd_grad_check(args) -> int:
    report = run_all(seed=args.seed or 0, n_instances=args.instances, perturb=args.perturb)
    failed = []
    for path, err in report.items():
        ok = err <= TOLERANCE
        print(f"{path:22s} max_rel_err={err:.3e} {'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(path)
    if failed:
        print("failing paths: " + ", ".join(failed))
        return EXIT_FAIL
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = with_overrides(load_config(args.config), args.seed, args.epochs, args.out)
    dataset = resolve_dataset(cfg)
    rows = run_ablation(cfg, dataset, run_dir(cfg))
    for r in rows:
        status = r["error"] or f"mAP={r['mAP']:.4f} cmc1={r['cmc1']:.4f}"
        print(f"{r['row']:14s} {status}")
    print(f"wrote {Path(run_dir(cfg)) / 'ablation.csv'}")
    return EXIT_FAIL if any(r["error"] for r in rows) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="camsep", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    g.add_argument("--config", required=True)
    g.add_argument("--out")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output root (overrides [run] out_dir)")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--config")
    e.add_argument("--checkpoint")
    e.add_argument("--dataset")
    e.add_argument("--out", help="write the metrics JSON here as well")
    e.add_argument("--masks", help="export attention masks as CSV")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("grad-check", help="finite-difference gradient suite")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--instances", type=int, default=100)
    c.add_argument("--perturb", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_grad_check)

    a = sub.add_parser("ablate", help="run the component ablation sweep")
    a.add_argument("--config", required=True)
    a.add_argument("--out")
    a.add_argument("--seed", type=int)
    a.add_argument("--epochs", type=int)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetFormatError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
