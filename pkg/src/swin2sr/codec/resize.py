"""MATLAB-style bicubic resampling expressed as per-axis weight matrices.

Resizing an (H, W) plane is ``Rh @ plane @ Rw.T``. The same matrices back
the model's bicubic skip branch and the downsampling inside the auxiliary
loss, so data pipeline and objective share one operator.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

CUBIC_A = -0.5


def cubic(x: np.ndarray) -> np.ndarray:
    """Keys cubic convolution kernel with a = -0.5 (support [-2, 2])."""
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (1.5 * ax3 - 2.5 * ax2 + 1.0) * (ax <= 1)
    far = (-0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0) * ((ax > 1) & (ax <= 2))
    return near + far


@lru_cache(maxsize=256)
def resize_matrix(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """(out_len, in_len) interpolation matrix, rows summing to 1.

    Output sample x (1-based) maps to input coordinate
    u = x / s + (1 - 1 / s) / 2 with s = out_len / in_len. When shrinking with
    antialiasing the kernel is stretched by 1 / s. Taps falling outside the
    signal are clamped onto the border sample.
    """
    if in_len < 1 or out_len < 1:
        raise ValueError("resize lengths must be positive")
    s = out_len / in_len
    width = 4.0
    if s < 1 and antialias:
        kernel = lambda t: s * cubic(s * t)  # noqa: E731
        width /= s
    else:
        kernel = cubic
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / s + 0.5 * (1.0 - 1.0 / s)
    left = np.floor(u - width / 2.0)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = kernel(u[:, None] - idx)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 1, in_len).astype(np.intp) - 1
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, idx.ravel()), w.ravel())
    mat.setflags(write=False)
    return mat


def resize_array(x: np.ndarray, out_h: int, out_w: int, antialias: bool = True,
                 axes: tuple[int, int] = (-2, -1)) -> np.ndarray:
    """Resize float data along two axes; other axes are carried along."""
    x = np.asarray(x, dtype=np.float64)
    ah, aw = axes[0] % x.ndim, axes[1] % x.ndim
    rh = resize_matrix(x.shape[ah], out_h, antialias)
    rw = resize_matrix(x.shape[aw], out_w, antialias)
    y = np.moveaxis(x, (ah, aw), (-2, -1))
    y = rh @ y @ rw.T
    return np.moveaxis(y, (-2, -1), (ah, aw))


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Resize an (H, W) or (H, W, C) image; uint8 in gives rounded uint8 out."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    out = resize_array(img, out_h, out_w, antialias, axes=(0, 1))
    if img.dtype == np.uint8:
        return np.clip(np.round(out), 0, 255).astype(np.uint8)
    return out
