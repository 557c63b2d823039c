"""Central finite-difference checks of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class GradReport:
    max_rel_err: float
    tol: float
    per_param: list[float] = field(default_factory=list)
    worst: tuple[int, int] | None = None
    message: str = ""

    @property
    def passed(self) -> bool:
        return not self.message and self.max_rel_err < self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise |a - n| scaled by the tensor's gradient magnitude.

    The scale is max(||a||_inf, ||n||_inf, floor). Per-element denominators
    would let O(h^2) truncation dominate on entries that are tiny next to
    their neighbours.
    """
    scale = max(float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-3,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradReport:
    """Compare tape gradients of the scalar ``f()`` against central differences.

    ``f`` must be deterministic and read the current ``params`` data each call.
    Parameters are perturbed in place and restored.
    """
    for p in params:
        p.grad = None
    try:
        root = f()
    except T.NonFiniteError as exc:
        return GradReport(float("inf"), tol, message=f"objective is not finite: {exc}")
    if not np.isfinite(root.data).all():
        return GradReport(float("inf"), tol, message="objective is not finite")
    T.backward(root)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def evaluate() -> float:
        with T.no_grad():
            return float(f().data)

    per_param = []
    worst, worst_err = None, -1.0
    for i, p in enumerate(params):
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        numeric = np.empty(flat.size)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            try:
                up = evaluate()
                flat[j] = orig - step
                down = evaluate()
            except T.NonFiniteError as exc:
                return GradReport(float("inf"), tol, per_param, (i, j), f"non-finite objective: {exc}")
            finally:
                flat[j] = orig
            numeric[j] = (up - down) / (2.0 * step)
        rel = relative_error(analytic[i].reshape(-1).astype(np.float64), numeric, floor)
        k = int(np.argmax(rel)) if rel.size else 0
        err = float(rel[k]) if rel.size else 0.0
        per_param.append(err)
        if err > worst_err:
            worst, worst_err = (i, k), err
    return GradReport(max(worst_err, 0.0), tol, per_param, worst)


def randomize_parameters(module, rng: np.random.Generator, dtype=np.float64):
    """Redraw every parameter at a well-conditioned scale for finite differences.

    Default init leaves attention outputs tiny, and LayerNorm then rescales
    them into a sharply curved regime where a 1e-3 step is not small.
    """
    for name, p in module.named_parameters():
        leaf = name.rsplit(".", 1)[-1]
        if p.ndim >= 2:
            fan_in = p.shape[0] if p.ndim == 2 else int(np.prod(p.shape[1:]))
            bound = np.sqrt(3.0 / fan_in)
            data = rng.uniform(-bound, bound, p.shape)
        elif name.endswith("log_inv_tau"):
            data = rng.uniform(0.0, np.log(5.0), p.shape)
        elif "norm" in name and leaf == "weight":
            data = rng.uniform(0.5, 1.5, p.shape)
        else:
            data = rng.uniform(-0.5, 0.5, p.shape)
        p.data = np.ascontiguousarray(data, dtype=dtype)
        p.grad = None
    return module


# -- the op suite behind ``swin2sr gradcheck`` -----------------------------
def _leaf(rng, *shape, lo=-2.0, hi=2.0, margin=0.0, kinks=()):
    """Uniform draw in [lo, hi] kept at least ``margin`` away from each kink."""
    x = rng.uniform(lo, hi, shape)
    for k in kinks:
        near = np.abs(x - k) < margin
        x[near] = k + np.sign(x[near] - k + 1e-300) * margin * (1 + rng.random(int(near.sum())))
    return Tensor(x, requires_grad=True, dtype=np.float64)


def _probe(out: Tensor, rng) -> Tensor:
    """Random linear functional, turning any output into a scalar."""
    w = T.constant(rng.uniform(-1, 1, out.shape), like=out)
    return T.tsum(T.mul(out, w))


def _case(name, build):
    return name, build


def _tensor_cases():
    def unary(fn, **kw):
        def build(rng):
            x = _leaf(rng, 3, 5, **kw)
            probe = T.constant(rng.uniform(-1, 1, (3, 5)), like=x)
            return (lambda: T.tsum(T.mul(fn(x), probe))), [x]
        return build

    def binary(fn, sa=(3, 4), sb=(3, 4), lo=-2.0):
        def build(rng):
            a, b = _leaf(rng, *sa), _leaf(rng, *sb, lo=lo)
            out_shape = fn(a, b).shape
            probe = T.constant(rng.uniform(-1, 1, out_shape), like=a)
            return (lambda: T.tsum(T.mul(fn(a, b), probe))), [a, b]
        return build

    def conv(rng):
        x, w, b = _leaf(rng, 1, 2, 5, 5), _leaf(rng, 3, 2, 3, 3), _leaf(rng, 3)
        probe = T.constant(rng.uniform(-1, 1, (1, 3, 5, 5)), like=x)
        return (lambda: T.tsum(T.mul(T.conv2d(x, w, b), probe))), [x, w, b]

    def lnorm(rng):
        x, g, b = _leaf(rng, 4, 8), _leaf(rng, 8), _leaf(rng, 8)
        probe = T.constant(rng.uniform(-1, 1, (4, 8)), like=x)
        return (lambda: T.tsum(T.mul(T.layer_norm(x, g, b), probe))), [x, g, b]

    def shapes(rng):
        x = _leaf(rng, 2, 3, 4, 5)
        idx = np.array([2, 0, 2, 1])
        probe = rng.uniform(-1, 1, (6, 3, 4))

        def f():
            y = T.permute(x.reshape(6, 4, 5), (2, 0, 1))
            y = T.roll(y, (1, -2), (1, 2))
            y = T.take(y, idx, axis=2)[1:4, ::2]
            y = T.concat([y, T.pad_reflect(y, 2, 3)[..., :y.shape[-2], :y.shape[-1]]], axis=0)
            return T.tsum(T.mul(y, T.constant(probe, like=y)))
        return f, [x]

    return [
        _case("matmul", binary(T.matmul, (2, 3, 4), (4, 2))),
        _case("conv2d", conv),
        _case("layer_norm", lnorm),
        _case("softmax", unary(T.softmax)),
        _case("add", binary(T.add, (3, 4), (4,))),
        _case("sub", binary(T.sub)),
        _case("mul", binary(T.mul)),
        _case("div", binary(T.div, lo=0.5)),
        _case("scale", unary(lambda x: T.scale(x, -1.7))),
        _case("exp", unary(T.exp)),
        _case("gelu", unary(T.gelu)),
        _case("sigmoid", unary(T.sigmoid)),
        _case("sign_log1p", unary(T.sign_log1p, margin=0.05, kinks=(0.0,))),
        _case("abs_mean", unary(lambda x: T.reshape(T.abs_mean(x), (1, 1)), margin=0.05, kinks=(0.0,))),
        _case("clamp", unary(lambda x: T.clamp(x, -1.0, 1.0), margin=0.05, kinks=(-1.0, 1.0))),
        _case("normalize", unary(T.normalize)),
        _case("shape_ops", shapes),
    ]


def _attention_cases():
    from .attention import CPBMlp, SwinV2Layer, build_shift_mask, cpb_bias, scaled_cosine_attention

    def sca(rng):
        M, h, d, nW = 4, 2, 4, 4
        q, k, v = (_leaf(rng, nW, h, M * M, d) for _ in range(3))
        tau = _leaf(rng, h, lo=0.0, hi=np.log(5.0))
        S = _leaf(rng, h, M * M, M * M, lo=0.0, hi=2.0)
        mask = build_shift_mask(8, 8, M, M // 2)
        probe = T.constant(rng.uniform(-1, 1, (nW, h, M * M, d)), like=q)
        f = lambda: T.tsum(T.mul(scaled_cosine_attention(q, k, v, tau, S, mask), probe))  # noqa: E731
        return f, [q, k, v, tau, S]

    def cpb(rng):
        net = randomize_parameters(CPBMlp(2, hidden=16, rng=rng), rng)
        probe = T.constant(rng.uniform(-1, 1, (2, 16, 16)), like=net.fc1.weight)
        return (lambda: T.tsum(T.mul(cpb_bias(net, 4, 2), probe))), net.parameters()

    def layer(rng):
        lay = randomize_parameters(SwinV2Layer(8, 2, 4, shift=2, rng=rng), rng)
        x = _leaf(rng, 1, 64, 8)
        probe = T.constant(rng.uniform(-1, 1, (1, 64, 8)), like=x)
        return (lambda: T.tsum(T.mul(lay(x, 8, 8), probe))), [x] + lay.parameters()

    return [_case("scaled_cosine_attention", sca), _case("cpb_bias", cpb), _case("s2tl", layer)]


def _l1_target(pred: np.ndarray) -> np.ndarray:
    # offset by 0.3 +- 0.1 so every residual sits far from the |.| kink
    cb = np.indices(pred.shape[-2:]).sum(0) % 2
    return pred + 0.3 + 0.1 * cb


def _loss_cases():
    from .codec.resize import resize_matrix
    from .losses import aux_loss, downsample, hf_loss, l1_loss

    def make(fn):
        def build(rng):
            x = _leaf(rng, 1, 3, 16, 16, lo=0.0, hi=1.0)
            y = T.constant(_l1_target(x.data), like=x)
            return (lambda: fn(x, y)), [x]
        return build

    def aux(rng):
        x = _leaf(rng, 1, 3, 16, 16, lo=0.0, hi=1.0)
        with T.no_grad():
            d = downsample(x, 4).data
        # target whose downsampled residual is the kink-free pattern
        lift = np.linalg.pinv(resize_matrix(16, 4, True))
        y = x.data + lift @ (_l1_target(d) - d) @ lift.T
        yt = T.constant(y, like=x)
        return (lambda: aux_loss(x, yt, 4)), [x]

    return [_case("l1_loss", make(l1_loss)), _case("aux_loss", aux), _case("hf_loss", make(hf_loss))]


def _model_cases():
    from .losses import total_loss
    from .model import PixelShuffleUpsampler, Swin2SR, preset

    def upsampler(rng):
        up = randomize_parameters(PixelShuffleUpsampler(4, 4, 3, rng), rng)
        x = _leaf(rng, 1, 4, 3, 3)
        probe = T.constant(rng.uniform(-1, 1, (1, 3, 12, 12)), like=x)
        return (lambda: T.tsum(T.mul(up(x), probe))), [x] + up.parameters()

    def micro(rng):
        model = randomize_parameters(Swin2SR(preset("micro"), seed=0), rng)
        lq = rng.random((1, 3, 16, 16))
        with T.no_grad():
            base = model(lq).data
        y = _l1_target(base)
        return (lambda: total_loss(model(lq), y, 2, 0.1, 0.1)), model.parameters()

    return [_case("upsampler_x4", upsampler), _case("micro_model_all_losses", micro)]


SUITES = {
    "tensor": _tensor_cases,
    "attention": _attention_cases,
    "losses": _loss_cases,
    "model": _model_cases,
}


def run_suite(modules: Sequence[str] | None = None, seed: int = 0, tol: float = 1e-4,
              callback=None) -> dict[str, GradReport]:
    """Run the named suites (all by default); returns one report per case."""
    modules = list(modules) if modules else list(SUITES)
    reports = {}
    for mod in modules:
        if mod not in SUITES:
            raise T.UsageError(f"unknown gradcheck module {mod!r}; choose from {sorted(SUITES)}")
        for name, build in SUITES[mod]():
            rng = np.random.default_rng([seed, len(reports)])
            f, params = build(rng)
            rep = grad_check(f, params, tol=tol)
            reports[f"{mod}.{name}"] = rep
            if callback:
                callback(f"{mod}.{name}", rep)
    return reports
