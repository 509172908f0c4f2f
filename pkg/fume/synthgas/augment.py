"""fume/synthgas/augment.py

Training-time augmentation. One geometric draw (flip, rotation) is shared
by both modalities and their masks; intensity jitter is drawn per present
frame. Frames are resampled bilinearly, masks by nearest neighbour.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from fume.synthgas.generator import GasFramePair

FLIP_PROB = 0.5
MAX_ROTATION = 15.0
SCALE_RANGE = (0.9, 1.1)
SHIFT_RANGE = (-10.0, 10.0)


@dataclass(frozen=True)
class AugmentParams:
    """One augmentation draw; the identity by default."""
    flip: bool = False
    angle: float = 0.0
    co2_scale: float = 1.0
    co2_shift: float = 0.0
    ch4_scale: float = 1.0
    ch4_shift: float = 0.0

    @classmethod
    def draw(cls, rng: np.random.Generator) -> "AugmentParams":
        return cls(
            flip=bool(rng.random() < FLIP_PROB),
            angle=float(rng.uniform(-MAX_ROTATION, MAX_ROTATION)),
            co2_scale=float(rng.uniform(*SCALE_RANGE)),
            co2_shift=float(rng.uniform(*SHIFT_RANGE)),
            ch4_scale=float(rng.uniform(*SCALE_RANGE)),
            ch4_shift=float(rng.uniform(*SHIFT_RANGE)),
        )


def _geometry(image: np.ndarray, params: AugmentParams, order: int) -> np.ndarray:
    out = image[:, ::-1] if params.flip else image
    if params.angle:
        out = ndimage.rotate(out.astype(np.float64), params.angle, reshape=False, order=order, mode="nearest")
    return out


def _frame(frame: np.ndarray, present: bool, params: AugmentParams, scale: float, shift: float) -> np.ndarray:
    if not present:
        return np.zeros_like(frame)
    out = _geometry(frame, params, order=1).astype(np.float64)
    if scale != 1.0 or shift != 0.0:
        out = out * scale + shift
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _mask(mask: np.ndarray, params: AugmentParams) -> np.ndarray:
    return np.rint(_geometry(mask, params, order=0)).astype(np.uint8)


def apply_augmentation(pair: GasFramePair, params: AugmentParams) -> GasFramePair:
    """Apply a fixed draw; the identity draw returns equal arrays."""
    return replace(
        pair,
        co2_frame=_frame(pair.co2_frame, pair.has_co2, params, params.co2_scale, params.co2_shift),
        ch4_frame=_frame(pair.ch4_frame, pair.has_ch4, params, params.ch4_scale, params.ch4_shift),
        co2_mask=_mask(pair.co2_mask, params),
        ch4_mask=_mask(pair.ch4_mask, params),
    )


def augment(pair: GasFramePair, seed: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> GasFramePair:
    """Random flip, rotation in +-15 degrees and intensity jitter."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    return apply_augmentation(pair, AugmentParams.draw(rng))
