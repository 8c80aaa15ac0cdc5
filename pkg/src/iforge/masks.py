"""Bernoulli retention masks over hidden units."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .network import NetworkSpec


class MaskMode(str, Enum):
    PER_STEP = "per_step"
    TEST_STOCHASTIC = "test_stochastic"
    FIXED_STRUCTURAL = "fixed_structural"


@dataclass(frozen=True)
class Mask:
    """One 0/1 vector per hidden layer, with the retention probability it was drawn at.

    ``per_step`` and ``test_stochastic`` masks use inverted dropout: retained
    units are scaled by ``1/p``. A ``fixed_structural`` mask defines an
    architecture and is applied without scaling.
    """

    bits: tuple[np.ndarray, ...]
    p: float
    mode: MaskMode

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"retention probability must be in (0, 1], got {self.p}")
        bits = []
        for r in self.bits:
            r = np.array(r, dtype=np.int8)
            if r.ndim != 1 or not np.isin(r, (0, 1)).all():
                raise ValueError("mask layers must be 1-d 0/1 vectors")
            r.flags.writeable = False
            bits.append(r)
        object.__setattr__(self, "bits", tuple(bits))
        object.__setattr__(self, "mode", MaskMode(self.mode))

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(len(r) for r in self.bits)

    @property
    def retained(self) -> tuple[int, ...]:
        return tuple(int(r.sum()) for r in self.bits)

    def multipliers(self) -> list[np.ndarray]:
        """Per-layer factors applied to hidden activations."""
        if self.mode is MaskMode.FIXED_STRUCTURAL:
            return [r.astype(float) for r in self.bits]
        return [r / self.p for r in self.bits]

    def to_dict(self) -> dict:
        return {"bits": [r.tolist() for r in self.bits], "p": self.p, "mode": self.mode.value}


def full_mask(spec: NetworkSpec, mode: MaskMode = MaskMode.FIXED_STRUCTURAL) -> Mask:
    return Mask(tuple(np.ones(z, dtype=np.int8) for z in spec.hidden_widths), 1.0, mode)


def sample_mask(spec: NetworkSpec, p: float, seed, mode: MaskMode | str = MaskMode.FIXED_STRUCTURAL) -> Mask:
    """Draw i.i.d. Bernoulli(p) bits for every hidden unit.

    ``seed`` may be an integer or a ``numpy.random.Generator`` (which is
    advanced). Structural masks never leave a layer empty: an all-zero layer
    is redrawn.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"retention probability must be in (0, 1], got {p}")
    mode = MaskMode(mode)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bits = []
    for width in spec.hidden_widths:
        r = rng.random(width) < p
        while mode is MaskMode.FIXED_STRUCTURAL and not r.any():
            r = rng.random(width) < p
        bits.append(r.astype(np.int8))
    return Mask(tuple(bits), float(p), mode)


def bernoulli_variance(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return p * (1.0 - p)
