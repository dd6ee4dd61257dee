"""Versioned binary container of named tensors, plus trainer (de)serialization.

Layout (little-endian): magic ``CSCK``, u16 version, u16 reserved, u32 record
count, then per record: u16 name length, UTF-8 name, u8 dtype code, u8 ndim,
``ndim`` x u32 dims, raw payload. Records are written in sorted name order so
equal state always yields identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .clustering import ClusterConfig
from .errors import DatasetFormatError
from .losses import LossWeights
from .memory_bank import MemoryBank
from .trainer import EpochReport, TrainConfig, Trainer

MAGIC = b"CSCK"
VERSION = 1
_HEAD = struct.Struct("<4sHHI")
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8"), 2: np.dtype("u1"), 3: np.dtype("<f4")}
_CODES = {v: k for k, v in _DTYPES.items()}


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [_HEAD.pack(MAGIC, VERSION, 0, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if np.dtype(dt) not in _CODES:
            raise TypeError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        arr = np.asarray(arr, dtype=dt)  # ascontiguousarray would promote 0-d to 1-d
        key = name.encode()
        chunks.append(struct.pack("<H", len(key)) + key)
        chunks.append(struct.pack("<BB", _CODES[np.dtype(dt)], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_tensors(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise DatasetFormatError(f"{path}: checkpoint header truncated")
    magic, version, _, count = _HEAD.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported checkpoint version {version}")
    out = {}
    pos = _HEAD.size
    try:
        for rec in range(count):
            (n,) = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2:pos + 2 + n].decode()
            pos += 2 + n
            code, ndim = struct.unpack_from("<BB", raw, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            dt = _DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + size > len(raw):
                raise DatasetFormatError(f"{path}: record {rec} ({name!r}) truncated")
            out[name] = np.frombuffer(raw, dt, count=size // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += size
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise DatasetFormatError(f"{path}: malformed record {len(out)}: {exc}") from exc
    return out


def _json_tensor(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode(), dtype=np.uint8)


def _from_json_tensor(arr) -> dict:
    return json.loads(bytes(arr).decode())


def save_checkpoint(path, trainer: Trainer) -> None:
    tensors = {f"param/{k}": v for k, v in trainer.params.items()}
    tensors.update({f"buffer/{k}": v for k, v in trainer.buffers.items()})
    tensors.update({f"adam.m/{k}": v for k, v in trainer.adam.m.items()})
    tensors.update({f"adam.v/{k}": v for k, v in trainer.adam.v.items()})
    meta = {
        "config": trainer.cfg.to_dict(),
        "epoch": trainer.epoch,
        "iteration": trainer.iteration,
        "adam_step": trainer.adam.step,
        "rng_state": trainer.rng.bit_generator.state,
        "history": [r.as_dict() for r in trainer.history],
        "n_cams": trainer.n_cams,
    }
    if trainer.bank is not None:
        tensors["bank/slots"] = trainer.bank.snapshot()
        meta["bank_momentum"] = trainer.bank.momentum
    tensors["meta/json"] = _json_tensor(meta)
    write_tensors(path, tensors)


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["cluster"] = ClusterConfig(**d["cluster"])
    d["weights"] = LossWeights(**d["weights"])
    return TrainConfig(**d)


def load_checkpoint(path, dataset, cfg: TrainConfig | None = None) -> Trainer:
    """Rebuild a :class:`Trainer` from ``path`` over ``dataset``.

    ``cfg`` overrides the stored configuration (e.g. a larger epoch count
    when resuming).
    """
    tensors = read_tensors(path)
    meta = _from_json_tensor(tensors.pop("meta/json"))
    trainer = Trainer(cfg or config_from_dict(meta["config"]), dataset)
    for key, arr in tensors.items():
        group, name = key.split("/", 1)
        if group == "param":
            if name not in trainer.params or trainer.params[name].shape != arr.shape:
                raise DatasetFormatError(
                    f"{path}: parameter {name!r} with shape {arr.shape} does not fit the dataset"
                )
            trainer.params[name] = arr
        elif group == "buffer":
            trainer.buffers[name] = arr
        elif group == "adam.m":
            trainer.adam.m[name] = arr
        elif group == "adam.v":
            trainer.adam.v[name] = arr
    trainer.adam.step = meta["adam_step"]
    trainer.epoch = meta["epoch"]
    trainer.iteration = meta["iteration"]
    trainer.rng.bit_generator.state = meta["rng_state"]
    trainer.history = [EpochReport(**r) for r in meta["history"]]
    if "bank/slots" in tensors:
        slots = tensors["bank/slots"]
        if slots.shape[0] != len(dataset):
            raise DatasetFormatError(
                f"{path}: bank holds {slots.shape[0]} slots but dataset has {len(dataset)} samples"
            )
        trainer.bank = MemoryBank(slots, meta["bank_momentum"])
    return trainer

