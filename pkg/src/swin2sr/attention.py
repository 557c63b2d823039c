"""Shifted-window scaled cosine attention and the post-norm SwinV2 layer."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module, parameter
from .tensor import Tensor, UsageError

MASK_VALUE = -100.0
MAX_LOGIT_SCALE = math.log(100.0)
INIT_LOGIT_SCALE = math.log(10.0)
CPB_HIDDEN = 512
CPB_RANGE = 16.0
NORM_FLOOR = 1e-12


# -- window geometry -------------------------------------------------------
def window_partition(x: Tensor, M: int) -> Tensor:
    """(B, H, W, C) -> (B*nW, M*M, C); windows row-major, batch-major."""
    B, H, W, C = x.shape
    if H % M or W % M:
        raise UsageError(f"{H}x{W} canvas is not a multiple of window {M}; pad first")
    x = x.reshape(B, H // M, M, W // M, M, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B * (H // M) * (W // M), M * M, C)


def window_reverse(windows: Tensor, M: int, H: int, W: int) -> Tensor:
    """Inverse of :func:`window_partition`."""
    nW = (H // M) * (W // M)
    B = windows.shape[0] // nW
    C = windows.shape[-1]
    x = windows.reshape(B, H // M, W // M, M, M, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B, H, W, C)


def cyclic_shift(x: Tensor, s: int) -> Tensor:
    """Torus roll of (B, H, W, C) by (-s, -s); ``cyclic_shift(x, -s)`` undoes it."""
    if s == 0:
        return x
    H, W = x.shape[1:3]
    if abs(s) >= min(H, W):
        raise UsageError(f"shift {s} too large for {H}x{W}")
    return T.roll(x, (-s, -s), (1, 2))


@lru_cache(maxsize=64)
def _shift_mask(H: int, W: int, M: int, s: int) -> np.ndarray:
    nW = (H // M) * (W // M)
    if s == 0:
        mask = np.zeros((nW, M * M, M * M))
    else:
        labels = np.zeros((H, W))
        cnt = 0
        for hs in (slice(0, -M), slice(-M, -s), slice(-s, None)):
            for ws in (slice(0, -M), slice(-M, -s), slice(-s, None)):
                labels[hs, ws] = cnt
                cnt += 1
        win = labels.reshape(H // M, M, W // M, M).transpose(0, 2, 1, 3).reshape(nW, M * M)
        mask = np.where(win[:, :, None] != win[:, None, :], MASK_VALUE, 0.0)
    mask.setflags(write=False)
    return mask


def build_shift_mask(H: int, W: int, M: int, s: int) -> np.ndarray:
    """Additive (nW, M*M, M*M) mask: -100 between tokens of different pre-shift regions."""
    if s not in (0, M // 2):
        raise UsageError(f"shift must be 0 or {M // 2}, got {s}")
    if H % M or W % M:
        raise UsageError(f"{H}x{W} canvas is not a multiple of window {M}")
    return _shift_mask(H, W, M, s)


# -- continuous position bias ----------------------------------------------
@lru_cache(maxsize=16)
def relative_coords_table(M: int) -> np.ndarray:
    """((2M-1)^2, 2) log-spaced displacements sign(d) ln(1+|d|) / ln(M)."""
    d = np.arange(-(M - 1), M, dtype=np.float64)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    table = np.stack([dy.ravel(), dx.ravel()], axis=1)
    denom = math.log(M) if M > 1 else 1.0
    table = np.sign(table) * np.log1p(np.abs(table)) / denom
    table.setflags(write=False)
    return table


@lru_cache(maxsize=16)
def relative_position_index(M: int) -> np.ndarray:
    """(M*M, M*M) row of the coords table for each token pair (i, j)."""
    ys, xs = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    ys, xs = ys.ravel(), xs.ravel()
    dy = ys[:, None] - ys[None, :] + (M - 1)
    dx = xs[:, None] - xs[None, :] + (M - 1)
    idx = dy * (2 * M - 1) + dx
    idx.setflags(write=False)
    return idx


class CPBMlp(Module):
    """2 -> hidden -> heads network over relative coordinates."""

    def __init__(self, heads: int, hidden: int = CPB_HIDDEN, rng=None):
        self.fc1 = Linear(2, hidden, bias=True, rng=rng)
        self.fc2 = Linear(hidden, heads, bias=False, rng=rng)

    def forward(self, coords: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(coords)))


def cpb_bias(cpb_mlp: CPBMlp, M: int, heads: int) -> Tensor:
    """(heads, M*M, M*M) position bias, each entry 16*sigmoid(mlp output)."""
    coords = T.constant(relative_coords_table(M), like=cpb_mlp.fc1.weight)
    out = cpb_mlp(coords)
    if out.shape[-1] != heads:
        raise T.ShapeError(f"cpb network emits {out.shape[-1]} heads, expected {heads}")
    table = T.scale(T.sigmoid(out), CPB_RANGE)
    N = M * M
    bias = T.take(table, relative_position_index(M).reshape(-1), axis=0)
    return bias.reshape(N, N, heads).permute(2, 0, 1)


# -- attention kernel ------------------------------------------------------
def logit_scale(log_inv_tau: Tensor) -> Tensor:
    """1/tau per head, with ln(1/tau) clamped at ln(100)."""
    return T.exp(T.clamp(log_inv_tau, hi=MAX_LOGIT_SCALE))


def scaled_cosine_attention(q: Tensor, k: Tensor, v: Tensor, log_inv_tau: Tensor,
                            S: Tensor | None = None, mask=None) -> Tensor:
    """softmax(cos(q, k) / tau + S + mask) v over (nW*B, heads, N, d) inputs.

    ``mask`` is an (nW, N, N) array; the leading batch axis must be a multiple of nW.
    """
    qn = T.normalize(q, NORM_FLOOR)
    kn = T.normalize(k, NORM_FLOOR)
    attn = T.matmul(qn, kn.swapaxes(-1, -2))
    heads = q.shape[1]
    attn = T.mul(attn, logit_scale(log_inv_tau).reshape(heads, 1, 1))
    if S is not None:
        attn = T.add(attn, S)
    if mask is not None:
        nW, N = mask.shape[0], mask.shape[1]
        BW = attn.shape[0]
        if BW % nW:
            raise T.ShapeError(f"{BW} windows not divisible by mask count {nW}")
        attn = attn.reshape(BW // nW, nW, heads, N, N)
        attn = T.add(attn, T.constant(mask[None, :, None], like=attn))
        attn = attn.reshape(BW, heads, N, N)
    attn = T.softmax(attn)
    return T.matmul(attn, v)


class WindowAttention(Module):
    def __init__(self, dim: int, heads: int, window: int, rng=None):
        if dim % heads:
            raise UsageError(f"channels {dim} not divisible by heads {heads}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim, self.heads, self.window = dim, heads, window
        self.qkv = Linear(dim, 3 * dim, rng=rng)
        self.proj = Linear(dim, dim, rng=rng)
        self.log_inv_tau = parameter(np.full(heads, INIT_LOGIT_SCALE))
        self.cpb = CPBMlp(heads, rng=rng)

    def position_bias(self) -> Tensor:
        return cpb_bias(self.cpb, self.window, self.heads)

    def forward(self, x: Tensor, mask=None, bias: Tensor | None = None) -> Tensor:
        BW, N, C = x.shape
        h, d = self.heads, C // self.heads
        qkv = self.qkv(x).reshape(BW, N, 3, h, d).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        S = self.position_bias() if bias is None else bias
        out = scaled_cosine_attention(q, k, v, self.log_inv_tau, S, mask)
        out = out.permute(0, 2, 1, 3).reshape(BW, N, C)
        return self.proj(out)


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng=None):
        self.fc1 = Linear(dim, hidden, rng=rng)
        self.fc2 = Linear(hidden, dim, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class SwinV2Layer(Module):
    """Post-norm layer: x1 = x + LN(W-MSA(x)); out = x1 + LN(MLP(x1))."""

    def __init__(self, dim: int, heads: int, window: int, shift: int = 0,
                 mlp_ratio: float = 2.0, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        if shift not in (0, window // 2):
            raise UsageError(f"shift must be 0 or {window // 2}")
        self.window, self.shift = window, shift
        self.attn = WindowAttention(dim, heads, window, rng=rng)
        self.norm1 = LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng=rng)
        self.norm2 = LayerNorm(dim)

    def forward(self, x: Tensor, H: int, W: int) -> Tensor:
        B, L, C = x.shape
        if L != H * W:
            raise T.ShapeError(f"{L} tokens for a {H}x{W} canvas")
        M, s = self.window, self.shift
        img = cyclic_shift(x.reshape(B, H, W, C), s)
        windows = window_partition(img, M)
        mask = build_shift_mask(H, W, M, s) if s else None
        attn = self.attn(windows, mask)
        img = cyclic_shift(window_reverse(attn, M, H, W), -s)
        x = T.add(x, self.norm1(img.reshape(B, H * W, C)))
        return T.add(x, self.norm2(self.mlp(x)))


# -- complexity ------------------------------------------------------------
def attention_flops(h: int, w: int, C: int, M: int) -> int:
    """Multiplies of windowed attention: 4hwC^2 + 2M^2hwC."""
    if (h * w) % (M * M):
        raise UsageError("h*w must be divisible by M^2")
    return 4 * h * w * C * C + 2 * M * M * h * w * C


def msa_flops(h: int, w: int, C: int) -> int:
    """Multiplies of global attention: 4hwC^2 + 2(hw)^2C."""
    return 4 * h * w * C * C + 2 * (h * w) ** 2 * C
