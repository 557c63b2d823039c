import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swin2sr import tensor as T
from swin2sr.attention import (
    INIT_LOGIT_SCALE,
    MASK_VALUE,
    CPBMlp,
    SwinV2Layer,
    WindowAttention,
    attention_flops,
    build_shift_mask,
    cpb_bias,
    cyclic_shift,
    logit_scale,
    msa_flops,
    relative_coords_table,
    relative_position_index,
    scaled_cosine_attention,
    window_partition,
    window_reverse,
)
from swin2sr.gradcheck import grad_check, randomize_parameters
from swin2sr.tensor import Tensor, UsageError

F64 = np.float64


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=F64), requires_grad=grad, dtype=F64)


# -- geometry -------------------------------------------------------------------
def test_partition_counts():
    out = window_partition(Tensor(np.zeros((1, 16, 16, 3))), 8)
    assert out.shape == (4, 64, 3)


def test_partition_index_oracle():
    # each token carries its own (row, col); enumerate where it must land
    H, W, M = 8, 16, 8
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    x = np.stack([rows, cols], -1)[None].astype(F64)
    win = window_partition(t64(x), M).data
    assert win.shape == (2, 64, 2)
    np.testing.assert_array_equal(win[1, 3 * 8 + 1], [3, 9])
    for r in range(H):
        for c in range(W):
            np.testing.assert_array_equal(win[c // M, (r % M) * M + c % M], [r, c])


def test_partition_rejects_indivisible():
    with pytest.raises(UsageError):
        window_partition(Tensor(np.zeros((1, 10, 16, 1))), 8)


@given(st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.sampled_from([2, 4]),
       st.integers(1, 3), st.integers(0, 2 ** 31))
def test_partition_roundtrip(B, gh, gw, M, C, seed):
    x = np.random.default_rng(seed).random((B, gh * M, gw * M, C)).astype(np.float32)
    back = window_reverse(window_partition(Tensor(x), M), M, gh * M, gw * M).data
    assert back.tobytes() == x.tobytes()


def test_cyclic_shift_index_oracle():
    x = np.arange(16, dtype=F64).reshape(1, 4, 4, 1)
    out = cyclic_shift(t64(x), 2).data[0, :, :, 0]
    for i in range(4):
        for j in range(4):
            assert out[i, j] == x[0, (i + 2) % 4, (j + 2) % 4, 0]
    assert cyclic_shift(t64(x), 0).data.tobytes() == x.tobytes()


@given(st.integers(1, 7), st.integers(0, 2 ** 31))
def test_cyclic_shift_inverse(s, seed):
    x = np.random.default_rng(seed).random((1, 8, 8, 2)).astype(np.float32)
    back = cyclic_shift(cyclic_shift(Tensor(x), s), -s).data
    assert back.tobytes() == x.tobytes()


# -- shift mask ------------------------------------------------------------------
def _region_oracle(H, W, M, s):
    """Label each shifted-canvas pixel by the pre-shift region it came from."""
    def band(i, n):
        return 0 if i < n - M else (1 if i < n - s else 2)

    lab = np.array([[band(i, H) * 3 + band(j, W) for j in range(W)] for i in range(H)])
    nW = (H // M) * (W // M)
    mask = np.zeros((nW, M * M, M * M))
    w = 0
    for by in range(H // M):
        for bx in range(W // M):
            toks = [lab[by * M + a, bx * M + b] for a in range(M) for b in range(M)]
            for p in range(M * M):
                for q in range(M * M):
                    mask[w, p, q] = 0.0 if toks[p] == toks[q] else MASK_VALUE
            w += 1
    return mask


def test_mask_shift_zero():
    assert not build_shift_mask(16, 16, 8, 0).any()


@pytest.mark.parametrize("H,W,M", [(4, 4, 4), (8, 8, 4), (8, 16, 8), (12, 8, 4)])
def test_mask_matches_region_oracle(H, W, M):
    np.testing.assert_array_equal(build_shift_mask(H, W, M, M // 2), _region_oracle(H, W, M, M // 2))


def test_mask_single_window_has_wrapped_regions():
    m = build_shift_mask(8, 8, 8, 4)
    assert m.shape == (1, 64, 64)
    assert (m == MASK_VALUE).any() and (m == 0).any()


def test_mask_rejects_other_shifts():
    with pytest.raises(UsageError):
        build_shift_mask(8, 8, 4, 1)


# -- scaled cosine attention -----------------------------------------------------
def _oracle_attention(q, k, v, inv_tau, S, mask=None):
    """Straight-line double-precision evaluation, one head and one window at a time."""
    BW, h, N, d = q.shape
    out = np.zeros_like(v)
    for b in range(BW):
        for hh in range(h):
            for i in range(N):
                logits = []
                for j in range(N):
                    qi, kj = q[b, hh, i], k[b, hh, j]
                    cos = sum(qi[t] * kj[t] for t in range(d)) / (
                        max(math.sqrt(sum(x * x for x in qi)), 1e-12) * max(math.sqrt(sum(x * x for x in kj)), 1e-12))
                    z = cos * inv_tau[hh] + (S[hh, i, j] if S is not None else 0.0)
                    if mask is not None:
                        z += mask[b % mask.shape[0], i, j]
                    logits.append(z)
                top = max(logits)
                e = [math.exp(z - top) for z in logits]
                tot = sum(e)
                for j in range(N):
                    out[b, hh, i] += e[j] / tot * v[b, hh, j]
    return out


def test_attention_two_token_oracle():
    q = np.array([[[[1.0, 0.5], [-0.3, 2.0]]]])
    k = np.array([[[[0.2, -1.0], [1.5, 0.4]]]])
    v = np.array([[[[1.0, 2.0], [3.0, -1.0]]]])
    log_inv_tau = np.array([math.log(3.0)])
    S = np.array([[[0.1, -0.4], [0.7, 0.0]]])
    out = scaled_cosine_attention(t64(q), t64(k), t64(v), t64(log_inv_tau), t64(S)).data
    np.testing.assert_allclose(out, _oracle_attention(q, k, v, [3.0], S), rtol=1e-12)


def test_attention_random_oracle_with_mask(rng):
    q, k, v = (rng.normal(size=(4, 2, 16, 3)) for _ in range(3))
    mask = build_shift_mask(8, 8, 4, 2)
    S = rng.uniform(0, 16, (2, 16, 16))
    lt = np.array([0.3, 2.0])
    out = scaled_cosine_attention(t64(q), t64(k), t64(v), t64(lt), t64(S), mask).data
    np.testing.assert_allclose(out, _oracle_attention(q, k, v, np.exp(lt), S, mask), rtol=1e-10)


def test_attention_single_token_returns_v():
    v = np.array([[[[0.3, -0.7, 1.1]]]])
    out = scaled_cosine_attention(t64([[[[1.0, 2.0, 3.0]]]]), t64([[[[-1.0, 0.0, 5.0]]]]), t64(v), t64([1.0]))
    np.testing.assert_allclose(out.data, v, rtol=1e-12)


def test_attention_zero_token_is_finite():
    q = np.zeros((1, 1, 2, 2))
    k = np.ones((1, 1, 2, 2))
    out = scaled_cosine_attention(t64(q), t64(k), t64(np.eye(2)[None, None]), t64([0.0]))
    assert np.isfinite(out.data).all()


def test_logit_scale_clamped():
    vals = logit_scale(t64([0.0, INIT_LOGIT_SCALE, 10.0])).data
    np.testing.assert_allclose(vals, [1.0, 10.0, 100.0], rtol=1e-12)


def _attn_case(seed, windows=4, heads=2, N=16, d=4):
    r = np.random.default_rng(seed)
    q, k, v = (r.normal(size=(windows, heads, N, d)) for _ in range(3))
    lt = r.uniform(-1, math.log(100) + 1, heads)
    S = r.uniform(0, 16, (heads, N, N))
    return r, q, k, v, lt, S


@settings(max_examples=100)
@given(st.integers(0, 2 ** 31), st.floats(0.01, 100.0))
def test_property_cosine_scale_invariance(seed, c):
    r, q, k, v, lt, S = _attn_case(seed)
    base = scaled_cosine_attention(t64(q), t64(k), t64(v), t64(lt), t64(S)).data
    qs, ks = q.copy(), k.copy()
    qs[:, :, r.integers(16)] *= c
    ks[:, :, r.integers(16)] *= r.uniform(0.01, 100.0)
    ks[:, :, r.integers(16)] *= c
    out = scaled_cosine_attention(t64(qs), t64(ks), t64(v), t64(lt), t64(S)).data
    assert np.abs(out - base).max() / np.abs(base).max() < 1e-5


@settings(max_examples=100)
@given(st.integers(0, 2 ** 31))
def test_property_attention_convex_combination(seed):
    _, q, k, _, lt, S = _attn_case(seed)
    # with v = identity the output rows are the attention weights themselves
    v = np.broadcast_to(np.eye(16), (4, 2, 16, 16))
    w = scaled_cosine_attention(t64(q), t64(k), t64(v), t64(lt), t64(S), build_shift_mask(8, 8, 4, 2)).data
    assert (w >= 0).all()
    assert np.abs(w.sum(-1) - 1).max() < 1e-6


@settings(max_examples=100)
@given(st.integers(0, 2 ** 31), st.sampled_from([(8, 8, 4), (8, 16, 4), (16, 16, 8)]))
def test_property_mask_leakage(seed, geom):
    H, W, M = geom
    nW, N = (H // M) * (W // M), M * M
    r = np.random.default_rng(seed)
    q, k = (r.normal(size=(nW, 2, N, 4)) for _ in range(2))
    v = np.broadcast_to(np.eye(N), (nW, 2, N, N))
    # a -100 offset dominates while 2/tau + 16 stays well below 100; at the
    # clamp (1/tau = 100) a logit gap of 216 can beat it, so 1/tau is drawn up to 30
    lt = r.uniform(-1, math.log(30), 2)
    S = r.uniform(0, 16, (2, N, N))
    mask = build_shift_mask(H, W, M, M // 2)
    w = scaled_cosine_attention(t64(q), t64(k), t64(v), t64(lt), t64(S), mask).data
    cross = (mask != 0)[:, None]
    leak = (w * cross).sum(-1)
    assert leak.max() < 1e-8


@settings(max_examples=100)
@given(st.integers(0, 2 ** 31), st.sampled_from([2, 3, 4, 8]), st.integers(1, 3))
def test_property_cpb_displacement_constant(seed, M, heads):
    mlp = CPBMlp(heads, hidden=16, rng=np.random.default_rng(seed))
    randomize_parameters(mlp, np.random.default_rng(seed + 1), np.float32)
    S = cpb_bias(mlp, M, heads).data
    assert S.shape == (heads, M * M, M * M)
    assert (S > 0).all() and (S < 16).all()
    first = {}
    for i in range(M * M):
        for j in range(M * M):
            disp = (i // M - j // M, i % M - j % M)
            if disp in first:
                assert np.array_equal(S[:, i, j], S[:, first[disp][0], first[disp][1]])
            else:
                first[disp] = (i, j)
    assert len(first) == (2 * M - 1) ** 2


def test_coords_table():
    tab = relative_coords_table(8)
    idx = relative_position_index(8)
    np.testing.assert_array_equal(tab[idx[5, 5]], [0.0, 0.0])
    assert np.abs(tab).max() <= 1.0 + 1e-12
    np.testing.assert_allclose(tab[0], [-math.log(8) / math.log(8)] * 2)


# -- layer -------------------------------------------------------------------------
def test_layer_residual_identity(rng):
    layer = SwinV2Layer(8, 2, 4, shift=2, rng=rng)
    layer.attn.proj.weight.data[:] = 0
    layer.attn.proj.bias.data[:] = 0
    layer.mlp.fc2.weight.data[:] = 0
    layer.mlp.fc2.bias.data[:] = 0
    x = Tensor(rng.normal(size=(1, 64, 8)))
    np.testing.assert_array_equal(layer(x, 8, 8).data, x.data)


def test_layer_gradcheck():
    r = np.random.default_rng(3)
    layer = SwinV2Layer(8, 2, 4, shift=2, rng=r)
    randomize_parameters(layer, r)
    params = layer.parameters()
    x = t64(r.uniform(-2, 2, (1, 64, 8)), grad=True)
    probe = r.uniform(-1, 1, (1, 64, 8))
    rep = grad_check(lambda: T.tsum(T.mul(layer(x, 8, 8), probe)), [x] + params)
    assert rep.passed and rep.max_rel_err < 1e-4


def test_shifted_layer_crosses_window_border():
    r = np.random.default_rng(5)
    H = W = 8
    M = 4
    plain = SwinV2Layer(8, 2, M, shift=0, rng=np.random.default_rng(1)).to(F64)
    shifted = SwinV2Layer(8, 2, M, shift=2, rng=np.random.default_rng(1)).to(F64)
    x = r.normal(size=(1, H * W, 8))
    t = 3 * W + 3       # token (3, 3): plain window rows/cols 0..3
    other = 4 * W + 4   # pixel (4, 4): different plain window, same shifted window
    x2 = x.copy()
    x2[0, other] += 1.0
    d_plain = np.abs(plain(t64(x2), H, W).data - plain(t64(x), H, W).data)[0, t].max()
    d_shift = np.abs(shifted(t64(x2), H, W).data - shifted(t64(x), H, W).data)[0, t].max()
    assert d_plain == 0.0
    assert d_shift > 1e-6


# -- complexity ------------------------------------------------------------------
def test_flops_closed_forms():
    assert attention_flops(8, 8, 2, 4) == 5120
    assert msa_flops(8, 8, 2) == 17408
    assert attention_flops(8, 8, 2, 8) == msa_flops(8, 8, 2)


def instrumented_attention_macs(h, w, C, M, heads, rng):
    """Multiplies counted by a real windowed attention forward (position bias precomputed)."""
    attn = WindowAttention(C, heads, M, rng=rng)
    x = Tensor(rng.normal(size=(1, h, w, C)).astype(np.float32))
    windows = window_partition(x, M)
    bias = attn.position_bias()
    with T.no_grad(), T.tally_macs() as tally:
        attn(windows, None, bias)
    return tally.total


@pytest.mark.parametrize("h,w,C,M,heads", [(8, 8, 4, 4, 2), (16, 8, 6, 4, 3), (12, 12, 8, 6, 2),
                                           (16, 16, 4, 8, 1), (8, 24, 12, 8, 4)])
def test_instrumented_tally_equals_closed_form(h, w, C, M, heads):
    rng = np.random.default_rng(h * w + C)
    assert instrumented_attention_macs(h, w, C, M, heads, rng) == attention_flops(h, w, C, M)
    if h == w:
        assert instrumented_attention_macs(h, w, C, h, heads, rng) == msa_flops(h, w, C)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 64), st.sampled_from([1, 2, 4, 8]))
def test_window_reduces_to_global(a, b, C, M):
    h = w = M
    assert attention_flops(h, w, C, M) == msa_flops(h, w, C)
    assert attention_flops(a * M, b * M, C, M) <= msa_flops(a * M, b * M, C)
