"""The restoration network, its configuration, and exact cost accounting."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import CPB_HIDDEN, SwinV2Layer
from .codec.resize import resize_array
from .nn import Conv2d, Module
from .tensor import ShapeError, Tensor, UsageError

RGB_MEAN = (0.4488, 0.4371, 0.4040)
UPSAMPLERS = ("pixelshuffle", "dynamic", "none")
DYNAMIC_SCALES = (2, 3, 4)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    rstb_count: int = 6
    layers_per_rstb: int = 6
    window: int = 8
    channels: int = 180
    heads: int = 6
    mlp_ratio: float = 2.0
    scale: int = 2
    upsampler: str = "pixelshuffle"
    bicubic_skip: bool = True
    in_channels: int = 3

    def __post_init__(self):
        for name in ("rstb_count", "layers_per_rstb", "window", "channels", "heads"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.window < 2 or self.window % 2:
            raise ConfigError(f"window must be even and >= 2, got {self.window}")
        if self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.mlp_ratio <= 0 or int(self.channels * self.mlp_ratio) < 1:
            raise ConfigError(f"bad mlp_ratio {self.mlp_ratio}")
        if self.scale not in (1, 2, 3, 4):
            raise ConfigError(f"scale must be in 1..4, got {self.scale}")
        if self.upsampler not in UPSAMPLERS:
            raise ConfigError(f"upsampler must be one of {UPSAMPLERS}")
        if (self.scale == 1) != (self.upsampler == "none"):
            raise ConfigError("scale 1 goes with upsampler 'none' and only then")
        if self.in_channels not in (1, 3):
            raise ConfigError("in_channels must be 1 or 3")

    @property
    def mlp_hidden(self) -> int:
        return int(self.channels * self.mlp_ratio)

    def replace(self, **kw) -> ModelConfig:
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> ModelConfig:
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(d)


def preset(name: str, **overrides) -> ModelConfig:
    table = {
        "base": dict(rstb_count=6, layers_per_rstb=6, window=8, channels=180, heads=6),
        "lightweight": dict(rstb_count=4, layers_per_rstb=6, window=8, channels=60, heads=6),
        "tiny": dict(rstb_count=2, layers_per_rstb=2, window=8, channels=32, heads=4),
        "micro": dict(rstb_count=1, layers_per_rstb=2, window=4, channels=8, heads=2),
        "jpeg": dict(scale=1, upsampler="none", bicubic_skip=False),
    }
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(table)}")
    return ModelConfig(**{**table[name], **overrides})


# -- depth/space rearrangement ---------------------------------------------
def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(B, r*r*C, H, W) -> (B, C, rH, rW) with out[c, r*i+a, r*j+b] = in[c*r*r + a*r + b, i, j]."""
    B, Cr, H, W = x.shape
    if Cr % (r * r):
        raise ShapeError(f"{Cr} channels not divisible by {r}^2")
    C = Cr // (r * r)
    return x.reshape(B, C, r, r, H, W).permute(0, 1, 4, 2, 5, 3).reshape(B, C, H * r, W * r)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    B, C, Hr, Wr = x.shape
    if Hr % r or Wr % r:
        raise ShapeError(f"{Hr}x{Wr} not divisible by {r}")
    H, W = Hr // r, Wr // r
    return x.reshape(B, C, H, r, W, r).permute(0, 1, 3, 5, 2, 4).reshape(B, C * r * r, H, W)


# -- blocks ----------------------------------------------------------------
def _to_tokens(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    return x.permute(0, 2, 3, 1).reshape(B, H * W, C)


def _to_image(x: Tensor, H: int, W: int) -> Tensor:
    B, _, C = x.shape
    return x.reshape(B, H, W, C).permute(0, 3, 1, 2)


class RSTB(Module):
    """S2TL stack (shifts 0, M/2, 0, ...) then a 3x3 conv, inside a residual."""

    def __init__(self, dim, depth, heads, window, mlp_ratio, rng):
        self.layers = [
            SwinV2Layer(dim, heads, window, 0 if i % 2 == 0 else window // 2, mlp_ratio, rng=rng)
            for i in range(depth)
        ]
        self.conv = Conv2d(dim, dim, 3, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        H, W = x.shape[2:]
        y = _to_tokens(x)
        for layer in self.layers:
            y = layer(y, H, W)
        return T.add(x, self.conv(_to_image(y, H, W)))


def _stages(r: int) -> list[int]:
    if r not in (2, 3, 4):
        raise UsageError(f"upsampling factor must be 2, 3 or 4, got {r}")
    return [2, 2] if r == 4 else [r]


class PixelShuffleUpsampler(Module):
    """conv C -> r^2 C' and shuffle per stage (x4 = two x2 stages), then conv C' -> out."""

    def __init__(self, dim, scale, out_channels, rng):
        self.stages = _stages(scale)
        self.convs = []
        cin = dim
        for r in self.stages:
            self.convs.append(Conv2d(cin, r * r * out_channels, 3, rng=rng))
            cin = out_channels
        self.conv_last = Conv2d(out_channels, out_channels, 3, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        for conv, r in zip(self.convs, self.stages):
            x = pixel_shuffle(conv(x), r)
        return self.conv_last(x)


class DynamicUpsampler(Module):
    """Shared trunk conv with one shuffle head per factor; the factor is picked per call."""

    def __init__(self, dim, out_channels, rng):
        self.trunk = Conv2d(dim, dim, 3, rng=rng)
        self.heads = {
            str(r): _Head(dim, r, out_channels, rng) for r in DYNAMIC_SCALES
        }

    def forward(self, x: Tensor, r: int) -> Tensor:
        if r not in DYNAMIC_SCALES:
            raise UsageError(f"dynamic upsampler supports {DYNAMIC_SCALES}, got {r}")
        return self.heads[str(r)](T.gelu(self.trunk(x)))


class _Head(Module):
    def __init__(self, dim, r, out_channels, rng):
        self.r = r
        self.conv = Conv2d(dim, r * r * out_channels, 3, rng=rng)
        self.conv_last = Conv2d(out_channels, out_channels, 3, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv_last(pixel_shuffle(self.conv(x), self.r))


class Swin2SR(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        c, C = config.in_channels, config.channels
        self.conv_first = Conv2d(c, C, 3, rng=rng)
        self.rstbs = [
            RSTB(C, config.layers_per_rstb, config.heads, config.window, config.mlp_ratio, rng)
            for _ in range(config.rstb_count)
        ]
        self.conv_after_body = Conv2d(C, C, 3, rng=rng)
        if config.upsampler == "pixelshuffle":
            self.upsample = PixelShuffleUpsampler(C, config.scale, c, rng)
        elif config.upsampler == "dynamic":
            self.upsample = DynamicUpsampler(C, c, rng)
        else:
            self.conv_last = Conv2d(C, c, 3, rng=rng)

    @property
    def mean(self) -> np.ndarray:
        m = np.array(RGB_MEAN) if self.config.in_channels == 3 else np.array([np.mean(RGB_MEAN)])
        return m.reshape(1, -1, 1, 1)

    def _scale(self, scale: int | None) -> int:
        cfg = self.config
        r = cfg.scale if scale is None else scale
        if r != cfg.scale and cfg.upsampler != "dynamic":
            raise UsageError(f"model is fixed at x{cfg.scale}; got x{r}")
        return r

    def shallow(self, x: Tensor) -> Tensor:
        return self.conv_first(x)

    def deep(self, feat: Tensor) -> Tensor:
        y = feat
        for block in self.rstbs:
            y = block(y)
        return T.add(self.conv_after_body(y), feat)

    def reconstruct(self, feat: Tensor, r: int) -> Tensor:
        up = self.config.upsampler
        if up == "pixelshuffle":
            return self.upsample(feat)
        if up == "dynamic":
            return self.upsample(feat, r)
        return self.conv_last(feat)

    def net(self, lq: Tensor, r: int) -> Tensor:
        """Learned branch at output resolution (no skip)."""
        B, c, H, W = lq.shape
        M = self.config.window
        ph, pw = (-H) % M, (-W) % M
        x = T.sub(lq, T.constant(self.mean, like=lq))
        x = T.pad_reflect(x, ph, pw)
        out = self.reconstruct(self.deep(self.shallow(x)), r)
        if ph or pw:
            out = out[:, :, : H * r, : W * r]
        return out

    def forward(self, lq, scale: int | None = None) -> Tensor:
        """lq: (B, in_channels, H, W) in [0, 1]; returns the unclamped restoration."""
        dtype = self.conv_first.weight.dtype
        lq = lq if isinstance(lq, Tensor) else Tensor(np.asarray(lq), dtype=dtype)
        if lq.ndim != 4 or lq.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected (B, {self.config.in_channels}, H, W), got {lq.shape}")
        r = self._scale(scale)
        out = self.net(lq, r)
        if self.config.bicubic_skip:
            H, W = lq.shape[2:]
            base = resize_array(lq.data, H * r, W * r).astype(dtype)
            out = T.add(out, T.constant(base, like=out))
        return out


def zero_network(model: Module) -> Module:
    """Zero every parameter: the learned branch then contributes exactly 0."""
    for p in model.parameters():
        p.data = np.zeros_like(p.data)
    return model


# -- analytic accounting ---------------------------------------------------
def _conv_params(cin, cout, k=3):
    return cin * cout * k * k + cout


def _layer_params(cfg: ModelConfig) -> int:
    C, h = cfg.channels, cfg.heads
    attn = (C * 3 * C + 3 * C) + (C * C + C) + h
    cpb = (2 * CPB_HIDDEN + CPB_HIDDEN) + CPB_HIDDEN * h
    mlp = (C * cfg.mlp_hidden + cfg.mlp_hidden) + (cfg.mlp_hidden * C + C)
    return attn + cpb + mlp + 4 * C


def _upsampler_params(cfg: ModelConfig) -> int:
    C, c = cfg.channels, cfg.in_channels
    if cfg.upsampler == "none":
        return _conv_params(C, c)
    if cfg.upsampler == "pixelshuffle":
        total, cin = 0, C
        for r in _stages(cfg.scale):
            total += _conv_params(cin, r * r * c)
            cin = c
        return total + _conv_params(c, c)
    return _conv_params(C, C) + sum(_conv_params(C, r * r * c) + _conv_params(c, c) for r in DYNAMIC_SCALES)


def count_params(cfg: ModelConfig) -> int:
    C = cfg.channels
    body = cfg.rstb_count * (cfg.layers_per_rstb * _layer_params(cfg) + _conv_params(C, C))
    return _conv_params(cfg.in_channels, C) + body + _conv_params(C, C) + _upsampler_params(cfg)


def mac_breakdown(cfg: ModelConfig, H: int, W: int, scale: int | None = None) -> dict[str, int]:
    """Multiply-accumulates for one forward on an H x W input, split by origin.

    Keys: ``conv``, ``linear`` (token projections and MLP), ``attention``
    (the two windowed products QK^T and AV), ``cpb`` (position-bias network).
    The network runs on the canvas padded up to window multiples.
    """
    M, C, c = cfg.window, cfg.channels, cfg.in_channels
    r = cfg.scale if scale is None else scale
    Hp, Wp = H + (-H) % M, W + (-W) % M
    N = Hp * Wp
    L = cfg.rstb_count * cfg.layers_per_rstb
    k9 = 9

    conv = c * C * k9 * N + cfg.rstb_count * C * C * k9 * N + C * C * k9 * N
    if cfg.upsampler == "none":
        conv += C * c * k9 * N
    else:
        area, cin = N, C
        if cfg.upsampler == "dynamic":
            conv += C * C * k9 * N
            stages = [r]
            if r not in DYNAMIC_SCALES:
                raise UsageError(f"dynamic upsampler supports {DYNAMIC_SCALES}, got {r}")
        else:
            stages = _stages(cfg.scale)
        for s in stages:
            conv += cin * s * s * c * k9 * area
            area *= s * s
            cin = c
        conv += c * c * k9 * area

    linear = L * N * (3 * C * C + C * C + 2 * C * cfg.mlp_hidden)
    attention = L * 2 * N * M * M * C
    rows = (2 * M - 1) ** 2
    cpb = L * rows * (2 * CPB_HIDDEN + CPB_HIDDEN * cfg.heads)
    return {"conv": conv, "linear": linear, "attention": attention, "cpb": cpb}


def count_macs(cfg: ModelConfig, H: int, W: int, scale: int | None = None) -> int:
    """Total multiply-accumulates of convs, linears and attention products."""
    return sum(mac_breakdown(cfg, H, W, scale).values())


def output_to_input_size(cfg: ModelConfig, out_h: int, out_w: int) -> tuple[int, int]:
    """Input size whose restoration is out_h x out_w (rounded up)."""
    r = cfg.scale
    return math.ceil(out_h / r), math.ceil(out_w / r)

