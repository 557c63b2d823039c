"""Training objectives: pixel L1, downsampled-consistency L1, high-frequency L1.

Both the bicubic downsampler and the 5x5 blur are linear and separable, so
each is applied as ``A @ z @ B.T`` with constant matrices. That keeps them on
the tape with the ordinary matmul backward.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import tensor as T
from .codec.resize import resize_matrix
from .tensor import ShapeError, Tensor

DEFAULT_SIGMA = 1.0
DEFAULT_LAMBDA_AUX = 0.1
DEFAULT_LAMBDA_HF = 0.1


def _check(pred: Tensor, target: Tensor):
    if pred.shape != target.shape:
        raise ShapeError(f"loss operands differ: {pred.shape} vs {target.shape}")


def _as(x, like=None) -> Tensor:
    return x if isinstance(x, Tensor) else T.constant(x, like=like)


def gaussian_1d(sigma: float = DEFAULT_SIGMA, size: int = 5) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return g / g.sum()


def blur_kernel5(sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Separable, normalized 5x5 Gaussian."""
    g = gaussian_1d(sigma)
    return np.outer(g, g)


@lru_cache(maxsize=64)
def blur_matrix(n: int, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """(n, n) same-size 1-D Gaussian filter with reflect borders."""
    g = gaussian_1d(sigma)
    src = T.reflect_indices(n, 2, 2)
    mat = np.zeros((n, n))
    for i in range(n):
        for k in range(5):
            mat[i, src[i + k]] += g[k]
    mat.setflags(write=False)
    return mat


def _separable(z: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    a = T.constant(rows, like=z)
    b = T.constant(np.ascontiguousarray(cols.T), like=z)
    return T.matmul(T.matmul(a, z), b)


def downsample(z: Tensor, r: int) -> Tensor:
    """Antialiased bicubic 1/r over the last two axes."""
    H, W = z.shape[-2:]
    if H % r or W % r:
        raise ShapeError(f"{H}x{W} is not divisible by {r}")
    return _separable(z, resize_matrix(H, H // r, True), resize_matrix(W, W // r, True))


def blur(z: Tensor, sigma: float = DEFAULT_SIGMA) -> Tensor:
    H, W = z.shape[-2:]
    return _separable(z, blur_matrix(H, sigma), blur_matrix(W, sigma))


def high_pass(z: Tensor, sigma: float = DEFAULT_SIGMA) -> Tensor:
    return T.sub(z, blur(z, sigma))


def l1_loss(pred: Tensor, target) -> Tensor:
    target = _as(target, pred)
    _check(pred, target)
    return T.abs_mean(T.sub(pred, target))


def aux_loss(pred: Tensor, target, r: int) -> Tensor:
    target = _as(target, pred)
    _check(pred, target)
    return T.abs_mean(T.sub(downsample(pred, r), downsample(target, r)))


def hf_loss(pred: Tensor, target, sigma: float = DEFAULT_SIGMA) -> Tensor:
    target = _as(target, pred)
    _check(pred, target)
    return T.abs_mean(T.sub(high_pass(target, sigma), high_pass(pred, sigma)))


def loss_terms(pred: Tensor, target, r: int, lambda_aux: float = DEFAULT_LAMBDA_AUX,
               lambda_hf: float = DEFAULT_LAMBDA_HF, sigma: float = DEFAULT_SIGMA) -> dict[str, Tensor]:
    """Each active term plus ``total``; zero-weight terms are not evaluated at all."""
    if lambda_aux < 0 or lambda_hf < 0:
        raise ValueError("loss weights must be nonnegative")
    target = _as(target, pred)
    terms = {"l1": l1_loss(pred, target)}
    total = terms["l1"]
    if lambda_aux:
        terms["aux"] = aux_loss(pred, target, r)
        total = T.add(total, T.scale(terms["aux"], lambda_aux))
    if lambda_hf:
        terms["hf"] = hf_loss(pred, target, sigma)
        total = T.add(total, T.scale(terms["hf"], lambda_hf))
    terms["total"] = total
    return terms


def total_loss(pred: Tensor, target, r: int, lambda_aux: float = DEFAULT_LAMBDA_AUX,
               lambda_hf: float = DEFAULT_LAMBDA_HF, sigma: float = DEFAULT_SIGMA) -> Tensor:
    return loss_terms(pred, target, r, lambda_aux, lambda_hf, sigma)["total"]
