"""Export-time inference: self-ensemble, tiling, and the two-stage pipeline."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .codec.resize import resize_array
from .data import dihedral, dihedral_inverse
from .model import ConfigError, Swin2SR
from .tensor import Tensor, UsageError


def to_input(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    """(H, W, 3) uint8 -> (1, 3, H, W) in [0, 1]."""
    return (np.asarray(img).transpose(2, 0, 1)[None] / 255.0).astype(dtype)


def to_image(x: np.ndarray) -> np.ndarray:
    """(1, 3, H, W) float -> clamped, rounded (H, W, 3) uint8."""
    return np.round(np.clip(x[0].transpose(1, 2, 0), 0.0, 1.0) * 255.0).astype(np.uint8)


def forward(model: Swin2SR, lq: np.ndarray, scale: int | None = None) -> np.ndarray:
    with T.no_grad():
        return model(lq, scale).data


def self_ensemble(fn, lq: np.ndarray) -> np.ndarray:
    """Average ``fn`` over the 8 dihedral transforms of an NCHW batch, each undone on the output."""
    acc = None
    for k in range(8):
        out = fn(np.ascontiguousarray(dihedral(lq, k, axes=(2, 3))))
        out = dihedral_inverse(out, k, axes=(2, 3)).astype(np.float64)
        acc = out if acc is None else acc + out
    return (acc / 8.0).astype(lq.dtype)


def _starts(n: int, tile: int, stride: int, align: int) -> list[int]:
    if n <= tile:
        return [0]
    if stride < align:
        raise UsageError(f"tile step {stride} is below the window size {align}")
    out, s = [], 0
    while True:
        s = min(s, n - tile)
        out.append(s)
        if s + tile >= n:
            return sorted(set(out))
        s = (s + stride) // align * align


def _keep(starts: list[int], tile: int, n: int) -> list[tuple[int, int]]:
    """Per tile, the span it owns: neighbours split each overlap at its midpoint."""
    spans = []
    for i, s in enumerate(starts):
        lo = 0 if i == 0 else (s + starts[i - 1] + tile) // 2
        hi = n if i == len(starts) - 1 else (starts[i + 1] + s + tile) // 2
        spans.append((lo, hi))
    return spans


BLENDS = ("seam", "mean")


def tile_infer(model: Swin2SR, lq: np.ndarray, tile: int, overlap: int = 0,
               scale: int | None = None, blend: str = "seam") -> np.ndarray:
    """Run the learned branch on overlapping tile x tile crops and stitch.

    Tile origins step by ``tile - overlap`` rounded down to the window size;
    the last tile sits flush with the border. ``seam`` keeps, for every pixel,
    the tile it lies deepest inside (overlaps split at the midpoint); ``mean``
    averages all covering tiles uniformly. Crop edges corrupt the outer rim
    of each tile, so ``seam`` is far closer to the whole-image result. The
    bicubic skip is added once on the full canvas. An image within one tile
    takes the plain forward path.
    """
    M = model.config.window
    if tile < M or tile % M:
        raise UsageError(f"tile must be a positive multiple of the window {M}, got {tile}")
    if overlap < 0 or overlap > tile - M:
        raise UsageError(f"overlap must be in [0, tile - {M}], got {overlap}")
    if blend not in BLENDS:
        raise UsageError(f"blend must be one of {BLENDS}")
    B, c, H, W = lq.shape
    if H <= tile and W <= tile:
        return forward(model, lq, scale)
    r = model._scale(scale)
    acc = np.zeros((B, c, H * r, W * r))
    cnt = np.zeros((1, 1, H * r, W * r))
    stride = tile - overlap
    ys, xs = _starts(H, tile, stride, M), _starts(W, tile, stride, M)
    if blend == "seam":
        ky, kx = _keep(ys, tile, H), _keep(xs, tile, W)
    else:
        ky = [(y, min(y + tile, H)) for y in ys]
        kx = [(x, min(x + tile, W)) for x in xs]
    with T.no_grad():
        for y, (y0, y1) in zip(ys, ky):
            for x, (x0, x1) in zip(xs, kx):
                crop = Tensor(lq[:, :, y:y + tile, x:x + tile], dtype=lq.dtype)
                out = model.net(crop, r).data
                sub = out[:, :, (y0 - y) * r:(y1 - y) * r, (x0 - x) * r:(x1 - x) * r]
                acc[:, :, y0 * r:y1 * r, x0 * r:x1 * r] += sub
                cnt[:, :, y0 * r:y1 * r, x0 * r:x1 * r] += 1
    out = acc / cnt
    if model.config.bicubic_skip:
        out = out + resize_array(lq, H * r, W * r)
    return out.astype(lq.dtype)


def restore(model: Swin2SR, img: np.ndarray, ensemble: bool = False, tile: int | None = None,
            overlap: int = 0, scale: int | None = None, blend: str = "seam") -> np.ndarray:
    """uint8 in, uint8 out."""
    lq = to_input(img, model.conv_first.weight.dtype)
    return to_image(run(model, lq, ensemble, tile, overlap, scale, blend))


def run(model: Swin2SR, lq: np.ndarray, ensemble: bool = False, tile: int | None = None,
        overlap: int = 0, scale: int | None = None, blend: str = "seam") -> np.ndarray:
    if tile:
        fn = lambda x: tile_infer(model, x, tile, overlap, scale, blend)  # noqa: E731
    else:
        fn = lambda x: forward(model, x, scale)  # noqa: E731
    return self_ensemble(fn, lq) if ensemble else fn(lq)


def pipeline_ci2(stage1: Swin2SR, stage2: Swin2SR, lq: np.ndarray, ensemble1: bool = False,
                 ensemble2: bool = False, tile: int | None = None, overlap: int = 0) -> np.ndarray:
    """Artifact removal at input resolution, then x4 upscaling; NCHW floats in and out."""
    if stage1.config.scale != 1:
        raise ConfigError(f"stage 1 must be a scale-1 model, got x{stage1.config.scale}")
    if stage2.config.scale != 4 and stage2.config.upsampler != "dynamic":
        raise ConfigError(f"stage 2 must upscale x4, got x{stage2.config.scale}")
    mid = np.clip(run(stage1, lq, ensemble1, tile, overlap), 0.0, 1.0).astype(lq.dtype)
    return run(stage2, mid, ensemble2, tile, overlap, scale=4)

