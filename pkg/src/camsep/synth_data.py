"""Synthetic camera-styled feature maps and their on-disk format.

Each sample is an ``H x W x C`` map standing in for a backbone output. The
first ``foreground_rows`` rows carry an identity template (zero-mean
Gaussian, drawn once per identity); the remaining rows carry a camera
template (half-normal, i.e. non-negative "illumination", drawn once per
camera) scaled by ``style_strength``. Gaussian noise is added everywhere.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetFormatError, ValidationError

MAGIC = b"CSDS"
VERSION = 1
_HEADER = struct.Struct("<4sHH6I")
_META_ROW = np.dtype([("sample_index", "<i4"), ("identity", "<i4"), ("camera", "<i4")])


@dataclass(frozen=True)
class SampleMeta:
    sample_index: int
    identity: int
    camera: int


@dataclass(frozen=True)
class SynthConfig:
    n_ids: int = 20
    n_cams: int = 4
    samples_per_id: int = 20
    H: int = 8
    W: int = 4
    C: int = 16
    style_strength: float = 2.0
    noise_sigma: float = 0.5
    foreground_rows: int = 4
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_ids", "n_cams", "samples_per_id", "H", "W", "C"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.foreground_rows <= self.H:
            raise ConfigError(
                f"foreground_rows must lie in [0, H={self.H}], got {self.foreground_rows}"
            )
        if self.style_strength < 0:
            raise ConfigError(f"style_strength must be >= 0, got {self.style_strength}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.n_cams > self.samples_per_id:
            raise ConfigError(
                f"n_cams={self.n_cams} > samples_per_id={self.samples_per_id}: "
                "round-robin assignment cannot cover every camera"
            )
        if self.n_cams < 2 and self.samples_per_id >= 2:
            raise ConfigError("n_cams must be >= 2 so identities span two cameras")


@dataclass
class Dataset:
    """Feature maps ``(N, H, W, C)`` float32 plus per-sample labels."""

    maps: np.ndarray
    identities: np.ndarray
    cameras: np.ndarray
    n_ids: int
    n_cams: int

    def __len__(self) -> int:
        return self.maps.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.maps.shape[1:])

    @property
    def metas(self) -> list[SampleMeta]:
        return [
            SampleMeta(i, int(k), int(c))
            for i, (k, c) in enumerate(zip(self.identities, self.cameras))
        ]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n_ids == other.n_ids
            and self.n_cams == other.n_cams
            and self.maps.dtype == other.maps.dtype
            and np.array_equal(self.maps, other.maps)
            and np.array_equal(self.identities, other.identities)
            and np.array_equal(self.cameras, other.cameras)
        )


def generate_dataset(cfg: SynthConfig) -> Dataset:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    fg, bg = cfg.foreground_rows, cfg.H - cfg.foreground_rows

    id_templates = rng.standard_normal((cfg.n_ids, fg, cfg.W, cfg.C))
    cam_templates = np.abs(rng.standard_normal((cfg.n_cams, bg, cfg.W, cfg.C)))

    n = cfg.n_ids * cfg.samples_per_id
    identities = np.repeat(np.arange(cfg.n_ids), cfg.samples_per_id)
    cameras = np.tile(np.arange(cfg.samples_per_id) % cfg.n_cams, cfg.n_ids)

    maps = np.empty((n, cfg.H, cfg.W, cfg.C))
    maps[:, :fg] = id_templates[identities]
    maps[:, fg:] = cfg.style_strength * cam_templates[cameras]
    if cfg.noise_sigma > 0:
        maps += cfg.noise_sigma * rng.standard_normal(maps.shape)

    return Dataset(
        maps=maps.astype(np.float32),
        identities=identities.astype(np.int64),
        cameras=cameras.astype(np.int64),
        n_ids=cfg.n_ids,
        n_cams=cfg.n_cams,
    )


def encode_dataset(dataset: Dataset) -> bytes:
    """Serialize ``dataset`` to the versioned binary layout.

    Layout (little-endian): magic ``CSDS``, u16 version, u16 reserved,
    u32 ``N, H, W, C, n_ids, n_cams``, the float32 maps in row-major order,
    then ``N`` metadata rows of int32 ``(sample_index, identity, camera)``.
    """
    maps = np.ascontiguousarray(dataset.maps, dtype="<f4")
    n, h, w, c = maps.shape
    meta = np.empty(n, dtype=_META_ROW)
    meta["sample_index"] = np.arange(n)
    meta["identity"] = dataset.identities
    meta["camera"] = dataset.cameras
    header = _HEADER.pack(MAGIC, VERSION, 0, n, h, w, c, dataset.n_ids, dataset.n_cams)
    return header + maps.tobytes(order="C") + meta.tobytes()


def dataset_checksum(dataset: Dataset) -> str:
    return hashlib.sha256(encode_dataset(dataset)).hexdigest()


def save_dataset(path, dataset: Dataset) -> None:
    Path(path).write_bytes(encode_dataset(dataset))


def load_dataset(path) -> Dataset:
    return decode_dataset(Path(path).read_bytes(), str(path))


def decode_dataset(raw: bytes, path: str = "<bytes>") -> Dataset:
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: header truncated ({len(raw)} bytes)")
    magic, version, _, n, h, w, c, n_ids, n_cams = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")

    payload = n * h * w * c * 4
    expected = _HEADER.size + payload + n * _META_ROW.itemsize
    if len(raw) != expected:
        # name the first record the file cannot hold
        have = len(raw) - _HEADER.size
        if have < payload:
            rec = have // max(h * w * c * 4, 1)
            raise DatasetFormatError(
                f"{path}: payload truncated at map record {rec} of {n} "
                f"(expected {expected} bytes, got {len(raw)})"
            )
        rec = (have - payload) // _META_ROW.itemsize
        raise DatasetFormatError(
            f"{path}: metadata size mismatch at record {rec} of {n} "
            f"(expected {expected} bytes, got {len(raw)})"
        )

    maps = np.frombuffer(raw, dtype="<f4", count=n * h * w * c, offset=_HEADER.size)
    maps = maps.reshape(n, h, w, c).astype(np.float32)
    meta = np.frombuffer(raw, dtype=_META_ROW, count=n, offset=_HEADER.size + payload)

    for rec, row in enumerate(meta):
        if row["sample_index"] != rec:
            raise ValidationError(
                f"{path}: record {rec}: sample_index {row['sample_index']} out of order"
            )
        if not 0 <= row["camera"] < n_cams:
            raise ValidationError(
                f"{path}: record {rec}: camera {row['camera']} outside [0, {n_cams})"
            )
        if not 0 <= row["identity"] < n_ids:
            raise ValidationError(
                f"{path}: record {rec}: identity {row['identity']} outside [0, {n_ids})"
            )
    if not np.all(np.isfinite(maps)):
        bad = int(np.flatnonzero(~np.isfinite(maps).reshape(n, -1).all(axis=1))[0])
        raise ValidationError(f"{path}: record {bad}: non-finite feature values")

    return Dataset(
        maps=maps,
        identities=meta["identity"].astype(np.int64),
        cameras=meta["camera"].astype(np.int64),
        n_ids=int(n_ids),
        n_cams=int(n_cams),
    )
