"""Grayscale image IO and resizing helpers.

All in-memory images are float arrays in [0, 1], shape (H, W) for a single
image or (N, H, W) for a batch. On disk they are 8-bit grayscale PNGs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / 255.0


def save_png(pixels: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(pixels), mode="L").save(path)


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return from_uint8(np.asarray(img.convert("L")))


def load_batch(paths: list[str | Path]) -> np.ndarray:
    if not paths:
        raise ValueError("no image paths given")
    return np.stack([load_png(p) for p in paths])


def block_mean_resize(images: np.ndarray, size: int) -> np.ndarray:
    """Area-style downsample of (N, H, W) to (N, size, size) by averaging
    near-equal row/column bins. Works for any H, W >= size."""
    single = images.ndim == 2
    if single:
        images = images[None]
    n, h, w = images.shape
    if h < size or w < size:
        raise ValueError(f"cannot block-reduce {h}x{w} to {size}x{size}")
    row_edges = np.linspace(0, h, size + 1).astype(int)
    col_edges = np.linspace(0, w, size + 1).astype(int)
    out = np.empty((n, size, size), dtype=np.float64)
    for i in range(size):
        rows = images[:, row_edges[i] : row_edges[i + 1], :]
        for j in range(size):
            out[:, i, j] = rows[:, :, col_edges[j] : col_edges[j + 1]].mean(axis=(1, 2))
    result = out.astype(np.float32)
    return result[0] if single else result
