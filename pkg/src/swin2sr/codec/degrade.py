"""HR -> LQ degradation: antialiased bicubic downscale, then JPEG."""
from __future__ import annotations

import numpy as np

from ..tensor import UsageError
from . import jpeg
from .resize import bicubic_resize


def degrade(hr: np.ndarray, scale: int, quality: int | None) -> np.ndarray:
    """Downscale by ``scale`` (skipped at 1), then compress at ``quality``.

    ``quality=None`` disables compression, leaving plain bicubic degradation.
    """
    hr = np.asarray(hr)
    if hr.dtype != np.uint8:
        raise UsageError(f"degrade expects uint8 images, got {hr.dtype}")
    if scale < 1:
        raise UsageError(f"scale must be >= 1, got {scale}")
    H, W = hr.shape[:2]
    if H % scale or W % scale:
        raise UsageError(f"{H}x{W} is not divisible by scale {scale}; crop first")
    lq = hr if scale == 1 else bicubic_resize(hr, H // scale, W // scale, antialias=True)
    if quality is not None:
        lq = jpeg.decode(jpeg.encode(lq, quality))
    return lq
