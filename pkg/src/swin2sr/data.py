"""Patch sampling, dihedral augmentation and a procedural image corpus."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codec.degrade import degrade

log = logging.getLogger(__name__)

HR_PATCH = 192


def dihedral(x: np.ndarray, k: int, axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Element k of the 8-element dihedral group: optional flip, then k%4 quarter turns."""
    if not 0 <= k < 8:
        raise ValueError(f"dihedral index must be in 0..7, got {k}")
    if k & 4:
        x = np.flip(x, axis=axes[1])
    return np.rot90(x, k & 3, axes=axes)


def dihedral_inverse(x: np.ndarray, k: int, axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    x = np.rot90(x, -(k & 3), axes=axes)
    if k & 4:
        x = np.flip(x, axis=axes[1])
    return x


@dataclass
class TrainSample:
    hr: np.ndarray
    lq: np.ndarray
    tag: int
    origin: tuple[int, int]
    source: int


def _one_sample(img: np.ndarray, src: int, hr_size: int, r: int, q, seed) -> TrainSample:
    rng = np.random.default_rng(seed)
    H, W = img.shape[:2]
    y = int(rng.integers(0, H - hr_size + 1))
    x = int(rng.integers(0, W - hr_size + 1))
    tag = int(rng.integers(0, 8))
    hr = np.ascontiguousarray(dihedral(img[y:y + hr_size, x:x + hr_size], tag))
    return TrainSample(hr, degrade(hr, r, q), tag, (y, x), src)


def sample_batch(corpus: Sequence[np.ndarray], batch_size: int, r: int, q, seed,
                 hr_size: int = HR_PATCH, workers: int = 1) -> list[TrainSample]:
    """Random crops with independent dihedral transforms; LQ made from the transformed crop.

    ``q`` is a quality, None (no compression) or a sequence to draw one
    quality per batch from. Sample i uses its own generator derived from
    (seed, i), so the batch does not depend on ``workers``.
    """
    if hr_size % r:
        raise ValueError(f"patch {hr_size} not divisible by scale {r}")
    usable = [i for i, im in enumerate(corpus) if im.shape[0] >= hr_size and im.shape[1] >= hr_size]
    if len(usable) < len(corpus):
        log.warning("skipping %d image(s) smaller than %dx%d", len(corpus) - len(usable), hr_size, hr_size)
    if not usable:
        raise ValueError(f"no corpus image is at least {hr_size}x{hr_size}")
    base = list(np.atleast_1d(seed))
    rng = np.random.default_rng(base)
    if q is not None and not isinstance(q, (int, np.integer)):
        q = int(rng.choice(list(q)))
    picks = rng.choice(usable, size=batch_size)
    jobs = [(corpus[i], int(i), hr_size, r, q, base + [k]) for k, i in enumerate(picks)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda j: _one_sample(*j), jobs))
    return [_one_sample(*j) for j in jobs]


def to_batch(images: Sequence[np.ndarray], dtype=np.float32) -> np.ndarray:
    """(H, W, C) uint8 images -> (B, C, H, W) floats in [0, 1]."""
    return (np.stack(images).transpose(0, 3, 1, 2) / 255.0).astype(dtype)


# -- procedural corpus -----------------------------------------------------
def synthetic_image(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Smooth shading plus hard-edged shapes, stripes and mild texture."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    span = float(max(height, width))

    def draw(lo, hi):  # tiny canvases would invert a range
        return rng.uniform(lo, max(lo, hi))

    img = np.empty((height, width, 3))
    for c in range(3):
        a, b = rng.uniform(-1, 1, 2) / span
        img[..., c] = rng.uniform(60, 190) + 80 * (a * yy + b * xx)
    for _ in range(int(rng.integers(4, 9))):
        color = rng.uniform(0, 255, 3)
        kind = rng.integers(0, 3)
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        if kind == 0:
            rad = draw(4, span / 3)
            m = (yy - cy) ** 2 + (xx - cx) ** 2 < rad ** 2
        elif kind == 1:
            h2, w2 = draw(3, height / 3), draw(3, width / 3)
            m = (np.abs(yy - cy) < h2) & (np.abs(xx - cx) < w2)
        else:
            theta = rng.uniform(0, np.pi)
            period = rng.uniform(3, 12)
            phase = (np.cos(theta) * yy + np.sin(theta) * xx) / period
            rad = draw(10, span / 2)
            m = ((phase % 1.0) < 0.5) & ((yy - cy) ** 2 + (xx - cx) ** 2 < rad ** 2)
        img[m] = color
    img += rng.normal(0, 3, img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def synthetic_corpus(n: int, height: int = 96, width: int = 96, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [synthetic_image(rng, height, width) for _ in range(n)]
