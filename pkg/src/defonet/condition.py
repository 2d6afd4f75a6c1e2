"""One-hot encodings of the (force, location, material) condition."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

FORCE_BINS = 2
LOCATION_BINS = 7
MATERIAL_BINS = 2
WIDTHS = (FORCE_BINS, LOCATION_BINS, MATERIAL_BINS)
CONDITION_DIM = sum(WIDTHS)

_FIELDS = ("force", "location", "material")
_OFFSETS = (0, FORCE_BINS, FORCE_BINS + LOCATION_BINS)


@dataclass(frozen=True)
class Condition:
    force_bin: int
    location_bin: int
    material_bin: int

    def __post_init__(self):
        for name, value, width in zip(_FIELDS, self.as_tuple(), WIDTHS):
            if not isinstance(value, (int, np.integer)) or not 0 <= value < width:
                raise ValueError(f"{name} index {value!r} outside [0, {width})")
        object.__setattr__(self, "force_bin", int(self.force_bin))
        object.__setattr__(self, "location_bin", int(self.location_bin))
        object.__setattr__(self, "material_bin", int(self.material_bin))

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.force_bin, self.location_bin, self.material_bin)


def all_conditions() -> list[Condition]:
    return [Condition(*c) for c in product(*(range(w) for w in WIDTHS))]


def encode_vector(c: Condition) -> np.ndarray:
    """Flat one-hot vector laid out as [force(2) | location(7) | material(2)]."""
    if not isinstance(c, Condition):
        c = Condition(*c)
    v = np.zeros(CONDITION_DIM, np.float32)
    for offset, idx in zip(_OFFSETS, c.as_tuple()):
        v[offset + idx] = 1.0
    return v


def decode_vector(v) -> Condition:
    v = np.asarray(v)
    if v.shape != (CONDITION_DIM,):
        raise ValueError(f"condition vector must have length {CONDITION_DIM}, got shape {v.shape}")
    if not np.isin(v, (0, 1)).all():
        raise ValueError("condition vector must be binary")
    idx = []
    for name, offset, width in zip(_FIELDS, _OFFSETS, WIDTHS):
        seg = v[offset : offset + width]
        if seg.sum() != 1:
            raise ValueError(f"{name} segment must contain exactly one 1, found {int(seg.sum())}")
        idx.append(int(np.argmax(seg)))
    return Condition(*idx)


def encode_block_masks(c: Condition, spatial: int) -> np.ndarray:
    """Replicate the one-hot vector over an S³ volume: 11 constant channels."""
    v = encode_vector(c)
    return np.broadcast_to(v[:, None, None, None], (CONDITION_DIM, spatial, spatial, spatial)).copy()


def encode_batch(conditions) -> np.ndarray:
    """Stack conditions (Condition objects or index triples) into an (n, 11) array."""
    return np.stack([encode_vector(c) for c in conditions]) if len(conditions) else np.zeros((0, CONDITION_DIM), np.float32)
