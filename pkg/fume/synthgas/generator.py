"""fume/synthgas/generator.py

Synthetic dual-gas frame pairs.

A sample is one fermentation "shot": a fixed sampling tube at the bottom
centre of the frame and a turbulent plume rising from it, rendered once
for CO2 and once for CH4. Plume statistics depend on the pH of the sample:

* CO2 plumes get brighter and larger as pH falls; this is the signal
  that separates the three health classes.
* CH4 plumes get dimmer and smaller as pH falls and disappear more often
  (probability 0.1 at pH 6.5 up to 0.5 at pH 5.0). CH4 intensity carries
  a much larger jitter than CO2, so it is only weakly informative.

Masks label every pixel as background (0), tube (1) or gas (2).
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple

import numpy as np
from scipy import ndimage

from fume.errors import DataError, ShapeError

logger = logging.getLogger(__name__)

PH_MIN, PH_MAX = 4.0, 8.0
HEALTHY_MIN_PH = 6.0
TRANSITIONAL_MIN_PH = 5.8
PH_LEVELS = (6.5, 6.2, 5.9, 5.6, 5.3, 5.0)

BACKGROUND, TUBE, GAS = 0, 1, 2

BACKGROUND_LEVEL = 40.0
BACKGROUND_TEXTURE = 4.0
PIXEL_NOISE = 1.5
TUBE_LEVEL = 90.0
MIN_AREA, MAX_AREA = 0.02, 0.10
NOISE_CELLS = 8


class HealthLabel(IntEnum):
    """Rumen health state; the value is the class id used by the network."""
    HEALTHY = 0
    TRANSITIONAL = 1
    ACIDOTIC = 2

    @property
    def display(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_display(cls, text: str) -> "HealthLabel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise DataError(f"Unknown health label {text!r}")


def map_ph_to_class(ph: float) -> HealthLabel:
    """Healthy for pH >= 6.0, Transitional for 5.8 <= pH < 6.0, else Acidotic."""
    if not PH_MIN <= ph <= PH_MAX:
        raise DataError(f"pH {ph} outside the supported range [{PH_MIN}, {PH_MAX}]")
    if ph >= HEALTHY_MIN_PH:
        return HealthLabel.HEALTHY
    if ph >= TRANSITIONAL_MIN_PH:
        return HealthLabel.TRANSITIONAL
    return HealthLabel.ACIDOTIC


@dataclass
class GasFramePair:
    """Both modalities of one sample with their masks and label."""
    co2_frame: np.ndarray
    ch4_frame: np.ndarray
    co2_mask: np.ndarray
    ch4_mask: np.ndarray
    modality_mask: Tuple[bool, bool]
    ph: float
    label: HealthLabel

    @property
    def has_co2(self) -> bool:
        return bool(self.modality_mask[0])

    @property
    def has_ch4(self) -> bool:
        return bool(self.modality_mask[1])

    @property
    def size(self) -> int:
        return int(self.co2_frame.shape[0])

    def frames(self) -> np.ndarray:
        """(2, H, W) uint8 stack in (CO2, CH4) order."""
        return np.stack([self.co2_frame, self.ch4_frame])

    def masks(self) -> np.ndarray:
        return np.stack([self.co2_mask, self.ch4_mask])


def tube_region(size: int) -> Tuple[slice, slice]:
    """Rows and columns covered by the sampling tube."""
    return slice(int(0.80 * size), size), slice(int(0.40 * size), int(0.60 * size))


def _acidity(ph: float) -> float:
    # 0 at pH 6.5, 1 at pH 5.0
    return float(np.clip((6.5 - ph) / 1.5, 0.0, 1.0))


def value_noise(rng: np.random.Generator, size: int, cells: int = NOISE_CELLS) -> np.ndarray:
    """Smooth noise in [0, 1]: a random ``cells`` x ``cells`` grid, bilinearly zoomed."""
    grid = rng.random((cells, cells))
    field = ndimage.zoom(grid, size / cells, order=1, mode="nearest")
    return np.clip(field[:size, :size], 0.0, 1.0)


def plume_field(rng: np.random.Generator, size: int) -> np.ndarray:
    """Sum of 3-6 anisotropic Gaussian blobs drifting upward from the tube, modulated by value noise."""
    ys, xs = np.mgrid[0:size, 0:size] / size
    field = np.zeros((size, size))
    cy, cx = 0.70, 0.50
    for _ in range(int(rng.integers(3, 7))):
        sy = rng.uniform(0.03, 0.06)
        sx = rng.uniform(0.04, 0.08)
        weight = rng.uniform(0.6, 1.0)
        field += weight * np.exp(-0.5 * (((ys - cy) / sy) ** 2 + ((xs - cx) / sx) ** 2))
        cy -= rng.uniform(0.05, 0.10)
        cx = float(np.clip(cx + rng.normal(0.0, 0.03), 0.25, 0.75))
    return field * (0.5 + 0.5 * value_noise(rng, size))


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    texture = value_noise(rng, size)
    return BACKGROUND_LEVEL + BACKGROUND_TEXTURE * texture + rng.normal(0.0, PIXEL_NOISE, (size, size))


def _render(rng: np.random.Generator, size: int, area: float, intensity: float) -> Tuple[np.ndarray, np.ndarray]:
    """Render one modality; returns (uint8 frame, uint8 mask)."""
    rows, cols = tube_region(size)
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[rows, cols] = TUBE

    field = plume_field(rng, size)
    field[rows, cols] = -np.inf
    n_gas = int(round(area * size * size))
    order = np.argsort(-field, axis=None, kind="stable")[:n_gas]
    mask.flat[order] = GAS

    frame = _background(rng, size)
    gas = mask == GAS
    strength = 0.75 + 0.25 * rng.random(int(gas.sum()))
    strength /= strength.mean()
    frame[gas] += (intensity - BACKGROUND_LEVEL) * strength
    frame[rows, cols] = TUBE_LEVEL
    return np.clip(np.rint(frame), 0, 255).astype(np.uint8), mask


def _ph_key(ph: float) -> int:
    return int(round(ph * 100))


def synth_pair(ph: float, seed: int, size: int = 64) -> GasFramePair:
    """
    Render one dual-gas sample.

    Args:
        ph: Rumen pH of the sample, in [4, 8]
        seed: Non-negative sample seed; (ph, seed, size) fixes the output bit for bit
        size: Frame side length, a multiple of 32

    Returns:
        GasFramePair with uint8 frames and masks
    """
    label = map_ph_to_class(ph)
    if size <= 0 or size % 32:
        raise ShapeError(f"frame size must be a positive multiple of 32, got {size}")
    if seed < 0:
        raise DataError(f"sample seed must be non-negative, got {seed}")

    rng = np.random.default_rng([seed, _ph_key(ph)])
    t = _acidity(ph)

    co2_area = float(np.clip(0.035 + 0.03 * t + rng.uniform(-0.005, 0.005), MIN_AREA, MAX_AREA))
    co2_level = 110.0 + 60.0 * t + rng.normal(0.0, 3.0)
    co2_frame, co2_mask = _render(rng, size, co2_area, co2_level)

    ch4_present = rng.random() >= 0.1 + 0.4 * t
    ch4_area = float(np.clip(0.06 - 0.02 * t, MIN_AREA, MAX_AREA))
    ch4_level = 150.0 - 20.0 * t + rng.normal(0.0, 12.0)
    if ch4_present:
        ch4_frame, ch4_mask = _render(rng, size, ch4_area, ch4_level)
    else:
        ch4_frame = np.zeros((size, size), dtype=np.uint8)
        ch4_mask = np.zeros((size, size), dtype=np.uint8)

    return GasFramePair(
        co2_frame=co2_frame,
        ch4_frame=ch4_frame,
        co2_mask=co2_mask,
        ch4_mask=ch4_mask,
        modality_mask=(True, bool(ch4_present)),
        ph=float(ph),
        label=label,
    )
