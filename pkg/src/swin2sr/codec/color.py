"""BT.601 colour conversions.

Two variants on purpose: full range (JFIF) for the codec, studio range
(Y in [16, 235]) for quality metrics.
"""
from __future__ import annotations

import numpy as np

_FULL = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_FULL_INV = np.array([
    [1.0, 0.0, 1.402],
    [1.0, -0.344136, -0.714136],
    [1.0, 1.772, 0.0],
])
_STUDIO = np.array([
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
]) / 255.0
_STUDIO_OFFSET = np.array([16.0, 128.0, 128.0])


def rgb_to_ycbcr(img: np.ndarray) -> np.ndarray:
    """(H, W, 3) RGB in [0, 255] -> (3, H, W) full-range Y, Cb, Cr floats."""
    rgb = np.asarray(img, dtype=np.float64)
    out = np.einsum("ij,hwj->ihw", _FULL, rgb)
    out[1:] += 128.0
    return out


def ycbcr_to_rgb(planes: np.ndarray) -> np.ndarray:
    """(3, H, W) full-range planes -> (H, W, 3) uint8 RGB."""
    p = np.asarray(planes, dtype=np.float64).copy()
    p[1:] -= 128.0
    rgb = np.einsum("ij,jhw->hwi", _FULL_INV, p)
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def rgb_to_ycbcr_studio(img: np.ndarray) -> np.ndarray:
    """(H, W, 3) RGB in [0, 255] -> (3, H, W) studio-range planes (unrounded)."""
    rgb = np.asarray(img, dtype=np.float64)
    return np.einsum("ij,hwj->ihw", _STUDIO, rgb) + _STUDIO_OFFSET[:, None, None]


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """Studio-range luma of an RGB image; grayscale input is returned as float."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2 or arr.shape[-1] == 1:
        return arr.reshape(arr.shape[:2])
    return arr @ _STUDIO[0] + 16.0
