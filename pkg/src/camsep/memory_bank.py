"""Per-sample embedding memory with momentum updates."""
from __future__ import annotations

import numpy as np

from .errors import ValidationError

UNIT_TOL = 1e-6


class MemoryBank:
    """``N`` unit-length slots of dimension ``d`` (stored row-wise, ``N x d``).

    ``update_slot`` blends a slot toward a new embedding with momentum ``mu``
    and re-normalizes it. ``last_blend`` keeps the pre-normalization vector of
    the most recent update for inspection.
    """

    def __init__(self, embeddings, momentum: float = 0.2):
        emb = np.array(embeddings, dtype=np.float64, copy=True)
        if emb.ndim != 2 or emb.shape[0] < 1:
            raise ValidationError(f"embeddings must be an (N, d) array, got {emb.shape}")
        if not 0.0 <= momentum <= 1.0:
            raise ValidationError(f"momentum must lie in [0, 1], got {momentum}")
        norms = np.linalg.norm(emb, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
        if bad.size:
            raise ValidationError(
                f"embedding {bad[0]} has norm {norms[bad[0]]:.8f}, expected unit length"
            )
        self._slots = emb
        self.momentum = float(momentum)
        self.last_blend = None

    def __len__(self) -> int:
        return self._slots.shape[0]

    @property
    def dim(self) -> int:
        return self._slots.shape[1]

    def __getitem__(self, i) -> np.ndarray:
        return self._slots[i].copy()

    def update_slot(self, i: int, f) -> None:
        if not 0 <= i < len(self):
            raise IndexError(f"slot {i} out of range for bank of size {len(self)}")
        f = np.asarray(f, dtype=np.float64)
        if abs(np.linalg.norm(f) - 1.0) > UNIT_TOL:
            raise ValidationError(f"update for slot {i} is not unit length")
        mu = self.momentum
        blend = mu * self._slots[i] + (1.0 - mu) * f
        self.last_blend = blend
        if mu == 1.0:
            return
        if mu == 0.0:
            self._slots[i] = f
            return
        # antipodal old/new with mu = 0.5 leaves nothing to normalize
        norm = np.linalg.norm(blend)
        self._slots[i] = blend / norm if norm > 0 else f

    def snapshot(self) -> np.ndarray:
        snap = self._slots.copy()
        snap.flags.writeable = False
        return snap

    def load_slots(self, slots) -> None:
        """Restore slots from a checkpoint (no re-validation of momentum)."""
        slots = np.asarray(slots, dtype=np.float64)
        if slots.shape != self._slots.shape:
            raise ValidationError(f"slot shape {slots.shape} != bank shape {self._slots.shape}")
        self._slots = slots.copy()


def init_bank(embeddings, momentum: float = 0.2) -> MemoryBank:
    return MemoryBank(embeddings, momentum)
