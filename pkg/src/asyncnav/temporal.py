"""Sinusoidal encoding of perception age."""

from __future__ import annotations

import math

import numpy as np

DEFAULT_RESOLUTION = 0.01
ENCODING_DIM = 4


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def quantize(delta_t: float, resolution: float = DEFAULT_RESOLUTION) -> tuple[int, float]:
    """Return the step index j and re-quantized age t_j = j * resolution."""
    if not delta_t >= 0:
        raise ValueError(f"perception age must be non-negative, got {delta_t}")
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    j = round_half_away(delta_t / resolution)
    return j, j * resolution


def encode(delta_t: float, resolution: float = DEFAULT_RESOLUTION) -> np.ndarray:
    """Map an age in seconds to ``[sin t_j, cos t_j, sin(t_j/100), cos(t_j/100)]``."""
    _, t = quantize(delta_t, resolution)
    slow = t / 100.0
    return np.array([math.sin(t), math.cos(t), math.sin(slow), math.cos(slow)])


def encode_batch(delta_t: np.ndarray, resolution: float = DEFAULT_RESOLUTION) -> np.ndarray:
    delta_t = np.asarray(delta_t, dtype=np.float64)
    if np.any(~(delta_t >= 0)):
        raise ValueError("perception age must be non-negative")
    x = delta_t / resolution
    t = np.floor(x + 0.5) * resolution
    slow = t / 100.0
    return np.stack([np.sin(t), np.cos(t), np.sin(slow), np.cos(slow)], axis=-1)
