"""Inconsistency map and binary mask generation.

The raw map is the per-pixel disagreement between two conditional noise
estimates of the same noised image, averaged over several noise draws and
schedule steps.  Binarisation thresholds the map and keeps the largest
connected components.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .backends import (
    BackendBundle,
    NoiseSchedule,
    TokenEmbeddingMatrix,
    estimate_noise,
    forward_noise,
    validate_image,
)

__all__ = [
    "MaskGenConfig",
    "default_timesteps",
    "noise_difference_map",
    "binarize_mask",
]

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class MaskGenConfig:
    """Settings for map generation and binarisation.

    ``threshold`` is either the string ``"mean"`` (use the map's mean value)
    or a fixed float in [0, 1].  ``timesteps=None`` selects five evenly
    spaced indices over the middle 60% of the backend schedule.
    """

    n_noises: int = 10
    timesteps: tuple[int, ...] | None = None
    seed: int = 0
    outlier_percentiles: tuple[float, float] = (0.5, 99.5)
    threshold: str | float = "mean"
    max_components: int = 3

    def __post_init__(self) -> None:
        if self.n_noises < 1:
            raise ValueError("n_noises must be >= 1")
        lo, hi = self.outlier_percentiles
        if not (0.0 <= lo < hi <= 100.0):
            raise ValueError("outlier percentiles must satisfy 0 <= lo < hi <= 100")
        if isinstance(self.threshold, str):
            if self.threshold != "mean":
                raise ValueError(f"unknown threshold strategy {self.threshold!r}")
        elif not 0.0 <= float(self.threshold) <= 1.0:
            raise ValueError("fixed threshold must lie in [0, 1]")
        if self.max_components < 1:
            raise ValueError("max_components must be >= 1")
        if self.timesteps is not None:
            object.__setattr__(self, "timesteps", tuple(int(t) for t in self.timesteps))


def default_timesteps(schedule: NoiseSchedule, count: int = 5) -> tuple[int, ...]:
    """Evenly spaced step indices spanning the middle 60% of the schedule."""
    n = len(schedule)
    lo = int(np.floor(0.2 * n))
    hi = max(lo, int(np.ceil(0.8 * n)) - 1)
    idx = np.unique(np.round(np.linspace(lo, hi, count)).astype(int))
    return tuple(int(i) for i in idx)


def noise_difference_map(
    image: np.ndarray,
    ref: TokenEmbeddingMatrix | np.ndarray,
    target: TokenEmbeddingMatrix | np.ndarray,
    bundle: BackendBundle,
    cfg: MaskGenConfig = MaskGenConfig(),
) -> np.ndarray:
    """Average absolute disagreement of the two conditional noise estimates.

    For each noise draw and schedule step the image is forward-noised once
    and denoised twice (conditioned on ``ref`` and on ``target``); the
    absolute difference is reduced over channels, averaged over draws and
    steps, clamped at the configured percentiles, and min-max normalised to
    [0, 1].  A constant map normalises to all zeros.  Identical inputs and
    seed give an identical map.
    """
    image = validate_image(image)
    steps = cfg.timesteps if cfg.timesteps is not None else default_timesteps(bundle.schedule)
    if len(steps) == 0:
        raise ValueError("at least one timestep is required")
    rng = np.random.default_rng(cfg.seed)

    acc = np.zeros(image.shape[:2])
    for _ in range(cfg.n_noises):
        eps = rng.standard_normal(image.shape)
        for t in steps:
            x_t = forward_noise(image, t, eps, bundle.schedule)
            d = estimate_noise(bundle, x_t, t, ref) - estimate_noise(bundle, x_t, t, target)
            acc += np.abs(d).mean(axis=2)
    acc /= cfg.n_noises * len(steps)

    lo, hi = np.percentile(acc, cfg.outlier_percentiles)
    acc = np.clip(acc, lo, hi)
    span = acc.max() - acc.min()
    if span <= 0.0:
        return np.zeros_like(acc)
    return (acc - acc.min()) / span


def binarize_mask(diff_map: np.ndarray, cfg: MaskGenConfig = MaskGenConfig()) -> np.ndarray:
    """Threshold a difference map and keep the largest connected components.

    Pixels strictly above the threshold are foreground.  4-connected
    components are ranked by area (ties broken by the earliest top-left
    pixel in row-major order) and at most ``cfg.max_components`` survive.
    """
    diff_map = np.asarray(diff_map, dtype=np.float64)
    if diff_map.ndim != 2:
        raise ValueError(f"difference map must be 2-d, got shape {diff_map.shape}")
    if diff_map.size == 0 or not np.all(np.isfinite(diff_map)):
        raise ValueError("difference map must be non-empty and finite")
    if diff_map.min() < 0.0 or diff_map.max() > 1.0:
        raise ValueError("difference map values must lie in [0, 1]")

    thr = float(diff_map.mean()) if cfg.threshold == "mean" else float(cfg.threshold)
    fg = diff_map > thr
    if not fg.any():
        return np.zeros_like(fg)

    labels, n = ndimage.label(fg, structure=_FOUR_CONNECTED)
    if n <= cfg.max_components:
        return fg

    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n + 1)
    uniq, first_idx = np.unique(flat, return_index=True)  # first row-major occurrence
    first_pixel = np.zeros(n + 1, dtype=np.int64)
    first_pixel[uniq] = first_idx
    order = sorted(range(1, n + 1), key=lambda lab: (-areas[lab], first_pixel[lab]))
    keep = order[: cfg.max_components]
    return np.isin(labels, keep)
