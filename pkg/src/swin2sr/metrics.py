"""PSNR and SSIM on studio-range luma, with border shaving."""
from __future__ import annotations

import csv
import math
from typing import Iterable

import numpy as np

from .codec.color import rgb_to_y

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _luma_pair(a: np.ndarray, b: np.ndarray, shave: int) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    ya, yb = rgb_to_y(a), rgb_to_y(b)
    if shave:
        if 2 * shave >= min(ya.shape):
            raise ValueError(f"shave {shave} leaves nothing of {ya.shape}")
        ya, yb = ya[shave:-shave, shave:-shave], yb[shave:-shave, shave:-shave]
    return ya, yb


def psnr_y(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    ya, yb = _luma_pair(a, b, shave)
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0 ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(t * t) / (2 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    k = w.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(x, (k, k))
    return np.einsum("ijkl,kl->ij", view, w)


def ssim_y(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    ya, yb = _luma_pair(a, b, shave)
    if min(ya.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} after shaving")
    w = gaussian_window()
    c1, c2 = (K1 * 255) ** 2, (K2 * 255) ** 2
    mu_a, mu_b = _filter_valid(ya, w), _filter_valid(yb, w)
    saa = _filter_valid(ya * ya, w) - mu_a ** 2
    sbb = _filter_valid(yb * yb, w) - mu_b ** 2
    sab = _filter_valid(ya * yb, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def write_metrics_csv(rows: Iterable[tuple[str, float, float]], path) -> list[tuple[str, float, float]]:
    """One row per image plus a trailing ``mean`` row."""
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "psnr_y", "ssim_y"])
        for name, p, s in rows:
            w.writerow([name, f"{p:.4f}", f"{s:.6f}"])
        if rows:
            w.writerow(["mean", f"{np.mean([r[1] for r in rows]):.4f}", f"{np.mean([r[2] for r in rows]):.6f}"])
    return rows
