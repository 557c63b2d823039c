"""Dense tensors with a reverse-mode tape.

Every differentiable operation records its inputs and a backward rule on the
output tensor. ``backward`` linearises the graph into a :class:`Tape`
(topological order) and walks it once in reverse.

Arrays are numpy, row-major, NCHW for images. Float32 is the working
precision; float64 is used for gradient checks.
"""
from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf, expit

DEFAULT_DTYPE = np.float32

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    pass


class UsageError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class _State(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.tallies: list[MacTally] = []


_state = _State()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in this thread."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def grad_enabled() -> bool:
    return _state.grad_enabled


class MacTally:
    """Multiply-accumulate counter filled by matmul and conv2d."""

    def __init__(self):
        self.by_kind: dict[str, int] = {}

    def add(self, kind: str, n: int):
        self.by_kind[kind] = self.by_kind.get(kind, 0) + int(n)

    @property
    def total(self) -> int:
        return sum(self.by_kind.values())


@contextlib.contextmanager
def tally_macs():
    tally = MacTally()
    _state.tallies.append(tally)
    try:
        yield tally
    finally:
        _state.tallies.remove(tally)


def _count(kind: str, n: int):
    for t in _state.tallies:
        t.add(kind, n)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"

    # -- basic attributes ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self.op})"

    def __len__(self):
        return self.shape[0]

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, retain_graph: bool = False):
        backward(self, retain_graph=retain_graph)

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return permute(self, tuple(axes))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def abs(self):
        return tabs(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# -- tape ------------------------------------------------------------------
class Tape:
    """Operations reachable from a root, in topological order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> Tape:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(root: Tensor, retain_graph: bool = False):
    """Populate ``.grad`` of every requires_grad leaf reachable from ``root``."""
    if root.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise UsageError("root does not require grad")
    tape = Tape.from_root(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        if not retain_graph:
            node._parents = ()
            node._backward = None


# -- helpers ---------------------------------------------------------------
def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    elif not isinstance(a, Tensor):
        a, b = as_tensor(a), as_tensor(b)
    return a, b


# -- elementwise -----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "div")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * x.dtype.type(c), (x,), lambda g: (g * c,), "scale")


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))
    out = (xd * cdf).astype(x.dtype, copy=False)

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return ((g * (cdf + xd * pdf)).astype(x.dtype, copy=False),)

    return _make(out, (x,), bw, "gelu")


def sign_log1p(x: Tensor) -> Tensor:
    """sign(x) * ln(1 + |x|)."""
    xd = x.data
    out = np.sign(xd) * np.log1p(np.abs(xd))
    return _make(out, (x,), lambda g: (g / (1.0 + np.abs(xd)),), "sign_log1p")


def tabs(x: Tensor) -> Tensor:
    # sign(0) = 0 gives the zero subgradient at the kink
    sgn = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sgn,), "abs")


def clamp(x: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to [lo, hi]; gradient is 1 inside the closed interval, 0 outside."""
    xd = x.data
    out = np.clip(xd, lo, hi)
    inside = np.ones(xd.shape, dtype=bool)
    if lo is not None:
        inside &= xd >= lo
    if hi is not None:
        inside &= xd <= hi
    return _make(out, (x,), lambda g: (g * inside,), "clamp")


# -- reductions ------------------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return _make(np.asarray(out, dtype=x.dtype), (x,), bw, "mean")


def abs_mean(x: Tensor) -> Tensor:
    """Mean absolute value (L1 reduction)."""
    return mean(tabs(x))


# -- shape ops -------------------------------------------------------------
def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from None
    src = x.shape
    return _make(out, (x,), lambda g: (g.reshape(src),), "reshape")


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"bad permutation {axes} for rank {x.ndim}")
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _make(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),), "permute")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x: Tensor, idx) -> Tensor:
    out = np.array(x.data[idx], copy=True)
    basic = _is_basic_index(idx)

    def bw(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] += g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _make(out, (x,), bw, "getitem")


def take(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along one axis with an integer index array (duplicates allowed)."""
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim
    out = np.take(x.data, indices, axis=axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        gm = np.moveaxis(gx, axis, 0)
        gsrc = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(gm, indices, gsrc)
        return (gx,)

    return _make(out, (x,), bw, "take")


def roll(x: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    shifts, axes = tuple(shifts), tuple(axes)
    back = tuple(-s for s in shifts)
    out = np.roll(x.data, shifts, axes)
    return _make(out, (x,), lambda g: (np.roll(g, back, axes),), "roll")


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = list(xs)
    axis = axis % xs[0].ndim
    sizes = [t.shape[axis] for t in xs]
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, xs, bw, "concat")


def reflect_indices(n: int, before: int, after: int) -> np.ndarray:
    """Source indices for reflect padding (edge not repeated), any pad width."""
    idx = np.arange(-before, n + after)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def pad_reflect(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Reflect-pad the last two axes at the bottom/right."""
    if pad_h == 0 and pad_w == 0:
        return x
    H, W = x.shape[-2:]
    out = x
    if pad_h:
        out = take(out, reflect_indices(H, 0, pad_h), axis=-2)
    if pad_w:
        out = take(out, reflect_indices(W, 0, pad_w), axis=-1)
    return out


# -- linear algebra --------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims {a.shape[:-2]} vs {b.shape[:-2]}") from None
    m, k = a.shape[-2:]
    n = b.shape[-1]
    _count("matmul", int(np.prod(batch, dtype=np.int64)) * m * k * n)
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight (+ bias); weight is stored (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # (B, C, Hp, Wp) -> (B, C, H', W', kh, kw) strided view
    return np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, pad: int | None = None) -> Tensor:
    """2-D cross-correlation, stride 1, zero padding ``pad`` (default: same)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    B, cin, H, W = x.shape
    cout, wcin, kh, kw = w.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d: kernel sizes must be odd")
    if pad is None:
        pad = (kh - 1) // 2
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    Ho, Wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError("conv2d: kernel larger than padded input")
    _count("conv", B * cout * cin * kh * kw * Ho * Wo)
    cols = _im2col(xp, kh, kw)
    out = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3]))  # B,Ho,Wo,cout
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    parents = (x, w) if bias is None else (x, w, bias)

    def bw(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            # full correlation with the flipped, channel-transposed kernel
            ph, pw = kh - 1 - pad, kw - 1 - pad
            gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
            wf = w.data[:, :, ::-1, ::-1]
            gcols = _im2col(gp, kh, kw)
            gx = np.tensordot(gcols, wf, axes=([1, 4, 5], [0, 2, 3]))
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _make(out, parents, bw, "conv2d")


# -- normalisation ---------------------------------------------------------
def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise UsageError("layer_norm eps must be positive")
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"layer_norm: affine params must be ({C},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = gg = gbeta = None
        red = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            gg = (g * xhat).sum(axis=red)
        if beta.requires_grad:
            gbeta = g.sum(axis=red)
        if x.requires_grad:
            gh = g * gamma.data
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gbeta

    return _make(out, (x, gamma, beta), bw, "layer_norm")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale rows of the last axis to unit L2 norm, norm floored at ``eps``."""
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=-1, keepdims=True))
    nc = np.maximum(n, eps)
    out = xd / nc
    live = n > eps

    def bw(g):
        proj = (g * out).sum(axis=-1, keepdims=True)
        return (np.where(live, (g - out * proj) / nc, g / nc),)

    return _make(out, (x,), bw, "normalize")


def constant(arr, like: Tensor | None = None) -> Tensor:
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(arr), dtype=dtype)


def parameters_norm(params: Iterable[Tensor]) -> float:
    return float(math.sqrt(sum(float((p.data.astype(np.float64) ** 2).sum()) for p in params)))
