"""Small shared helpers: stable seeding and PNG image/mask I/O."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "stable_seed",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "overlay_mask",
]


def stable_seed(base_seed: int, *parts: object) -> int:
    """Process-independent 63-bit seed derived from a base seed and labels."""
    key = ":".join([str(int(base_seed)), *map(str, parts)])
    digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def load_image(path: str | Path) -> np.ndarray:
    """Read an image file as float RGB in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path: str | Path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8)).save(path, format="PNG")


def load_mask(path: str | Path) -> np.ndarray:
    """Read a single-channel mask PNG ({0, 255}) as a boolean array."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return arr >= 128


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def overlay_mask(image: np.ndarray, mask: np.ndarray, alpha: float = 0.4) -> np.ndarray:
    """Blend a red highlight over the masked pixels."""
    out = np.asarray(image, dtype=np.float64).copy()
    m = np.asarray(mask, dtype=bool)
    red = np.array([1.0, 0.0, 0.0])
    out[m] = (1.0 - alpha) * out[m] + alpha * red
    return np.clip(out, 0.0, 1.0)
