"""Reusable building blocks.

Multi-head cross attention and the aspect-text / aspect-image interaction
front-ends, the KAN layer, the DyT normaliser, convolutional gate maps and the
binary gated-fusion combinator.  Also the plain substitutes used by ablations
(two-layer perceptron, layer normalisation).

All functions accept arbitrary leading batch axes: sequences are ``(..., n, d)``.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import OpError, Tensor
from .params import filled, param, static, xavier, zeros


# --------------------------------------------------------------------------
# multi-head cross attention
# --------------------------------------------------------------------------

@dataclass
class MhcaParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    fc_w: Tensor
    fc_b: Tensor
    heads: int = static(1)


def init_mhca(rng, d, heads, dtype=np.float64):
    if d % heads:
        raise ValueError(f"model dim {d} is not divisible by {heads} heads")
    return MhcaParams(
        w_q=xavier(rng, d, d, dtype),
        w_k=xavier(rng, d, d, dtype),
        w_v=xavier(rng, d, d, dtype),
        w_o=xavier(rng, d, d, dtype),
        fc_w=xavier(rng, d, d, dtype),
        fc_b=zeros(d, dtype=dtype),
        heads=heads,
    )


def split_heads(x, heads):
    """``(..., n, d)`` -> ``(..., heads, n, d // heads)``."""
    *lead, n, d = x.shape
    x = ad.reshape(x, (*lead, n, heads, d // heads))
    k = len(lead)
    return ad.transpose(x, tuple(range(k)) + (k + 1, k, k + 2))


def merge_heads(x):
    *lead, h, n, dh = x.shape
    k = len(lead)
    x = ad.transpose(x, tuple(range(k)) + (k + 1, k, k + 2))
    return ad.reshape(x, (*lead, n, h * dh))


def mhca_forward(q_seq, kv_seq, p, return_weights=False):
    """Scaled dot-product attention of ``q_seq`` over ``kv_seq`` with ``p.heads`` heads."""
    if q_seq.shape[-2] < 1 or kv_seq.shape[-2] < 1:
        raise OpError(f"mhca: empty sequence (queries {q_seq.shape}, keys {kv_seq.shape})")
    h = p.heads
    d = p.w_q.shape[0]
    if q_seq.shape[-1] != d or kv_seq.shape[-1] != d:
        raise OpError(f"mhca: expected feature dim {d}, got {q_seq.shape[-1]} and {kv_seq.shape[-1]}")
    q = split_heads(ad.matmul(q_seq, p.w_q), h)
    k = split_heads(ad.matmul(kv_seq, p.w_k), h)
    v = split_heads(ad.matmul(kv_seq, p.w_v), h)
    logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(d // h))
    weights = ad.softmax(logits)
    out = ad.matmul(merge_heads(ad.matmul(weights, v)), p.w_o)
    if return_weights:
        return out, weights
    return out


def _fc_residual(x, p):
    return ad.add(ad.add(ad.matmul(x, p.fc_w), p.fc_b), x)


def ati_forward(H_S, H_A, p):
    """Aspect-text interaction: attention of sentence tokens over aspect tokens plus an FC residual."""
    return _fc_residual(mhca_forward(H_S, H_A, p), p)


@dataclass
class AviParams:
    mhca: MhcaParams
    w_img: Tensor
    w_g: Tensor
    b_g: Tensor


def init_avi(rng, d, d_img, heads, dtype=np.float64):
    return AviParams(
        mhca=init_mhca(rng, d, heads, dtype),
        w_img=xavier(rng, d_img, d, dtype),
        w_g=xavier(rng, d, d, dtype),
        b_g=zeros(d, dtype=dtype),
    )


def avi_forward(H_AS, H_I, p, return_parts=False):
    """Aspect-image interaction.

    Image tokens are projected to the model dimension and attend over the
    aspect-aware text ``H_AS``; after the FC residual a gate computed from the
    column-wise max over image tokens scales every token.  Output has one row
    per image token.
    """
    d_img = p.w_img.shape[0]
    if H_I.shape[-1] != d_img:
        raise OpError(f"avi: visual features have dim {H_I.shape[-1]}, parameters expect {d_img}")
    if H_I.shape[-2] < 1:
        raise OpError("avi: empty visual sequence")
    img = ad.matmul(H_I, p.w_img)
    H = _fc_residual(mhca_forward(img, H_AS, p.mhca), p.mhca)
    pooled = ad.max_rows(H)
    gate = ad.sigmoid(ad.add(ad.matmul(ad.reshape(pooled, pooled.shape[:-1] + (1, -1)), p.w_g), p.b_g))
    out = ad.mul(gate, H)
    if return_parts:
        return out, H, pooled, gate
    return out


# --------------------------------------------------------------------------
# DyT
# --------------------------------------------------------------------------

@dataclass
class DyTParams:
    alpha: Tensor
    gamma: Tensor
    beta: Tensor


def init_dyt(d, alpha=0.5, dtype=np.float64):
    return DyTParams(alpha=filled(alpha, 1, dtype=dtype), gamma=filled(1.0, d, dtype=dtype),
                     beta=zeros(d, dtype=dtype))


def dyt_forward(x, p):
    return ad.add(ad.mul(p.gamma, ad.tanh(ad.mul(p.alpha, x))), p.beta)


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = static(1e-5)


def init_layernorm(d, dtype=np.float64):
    return LayerNormParams(gamma=filled(1.0, d, dtype=dtype), beta=zeros(d, dtype=dtype))


def layernorm_forward(x, p):
    mu = ad.mean(x, axis=-1, keepdims=True)
    xc = ad.sub(x, mu)
    var = ad.mean(ad.mul(xc, xc), axis=-1, keepdims=True)
    inv = ad.power(ad.add(var, p.eps), -0.5)
    return ad.add(ad.mul(p.gamma, ad.mul(xc, inv)), p.beta)


# --------------------------------------------------------------------------
# KAN
# --------------------------------------------------------------------------

def kan_knots(grid_size, order, grid_range):
    """Uniform knot vector over ``[-grid_range, grid_range]`` extended by ``order`` knots per side."""
    h = 2.0 * grid_range / grid_size
    return np.arange(-order, grid_size + order + 1, dtype=np.float64) * h - grid_range


@dataclass
class KanParams:
    base_w: Tensor      # (d_in, d_out)
    coef: Tensor        # (d_in, grid_size + order, d_out)
    knots: np.ndarray = static()
    order: int = static(3)


def init_kan(rng, d_in, d_out, grid_size=5, order=3, grid_range=2.0, dtype=np.float64):
    knots = kan_knots(grid_size, order, grid_range)
    bound = 0.1 / np.sqrt(d_in)
    coef = param(rng.uniform(-bound, bound, size=(d_in, grid_size + order, d_out)), dtype)
    return KanParams(base_w=xavier(rng, d_in, d_out, dtype), coef=coef, knots=knots, order=order)


def kan_forward(x, p):
    """Sum over inputs of ``w_b * silu(x_i) + sum_m c_m B_m(x_i)`` for every output."""
    d_in, nb, d_out = p.coef.shape
    if x.shape[-1] != d_in:
        raise OpError(f"kan: expected input dim {d_in}, got {x.shape[-1]}")
    base = ad.matmul(ad.silu(x), p.base_w)
    basis = ad.bspline(x, p.knots, p.order)
    flat = ad.reshape(basis, x.shape[:-1] + (d_in * nb,))
    spline = ad.matmul(flat, ad.reshape(p.coef, (d_in * nb, d_out)))
    return ad.add(base, spline)


@dataclass
class FfnParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def init_ffn(rng, d_in, d_hidden, d_out, dtype=np.float64):
    return FfnParams(w1=xavier(rng, d_in, d_hidden, dtype), b1=zeros(d_hidden, dtype=dtype),
                     w2=xavier(rng, d_hidden, d_out, dtype), b2=zeros(d_out, dtype=dtype))


def ffn_forward(x, p):
    hidden = ad.silu(ad.add(ad.matmul(x, p.w1), p.b1))
    return ad.add(ad.matmul(hidden, p.w2), p.b2)


# --------------------------------------------------------------------------
# gates
# --------------------------------------------------------------------------

@dataclass
class GateConvParams:
    w: Tensor    # (width, d, d)
    b: Tensor    # (d,)


def init_gate_conv(rng, d, width=3, dtype=np.float64):
    if width % 2 != 1:
        raise ValueError(f"gate convolution width must be odd, got {width}")
    return GateConvParams(w=xavier(rng, width * d, d, dtype, shape=(width, d, d)), b=zeros(d, dtype=dtype))


def gate_map(H, p):
    """``sigmoid(conv(H))`` with a same-padded convolution along the sequence axis.

    A width-1 kernel is a pointwise linear map and is also accepted on a bare
    ``(..., d)`` vector.
    """
    if p.w.shape[0] == 1:
        w = ad.reshape(p.w, p.w.shape[1:])
        if H.ndim == 1:
            return ad.reshape(ad.sigmoid(ad.add(ad.matmul(ad.reshape(H, (1, -1)), w), p.b)), H.shape)
        return ad.sigmoid(ad.add(ad.matmul(H, w), p.b))
    return ad.sigmoid(ad.conv1d(H, p.w, p.b))


def gated_fuse(H_a, H_b, G_a, G_b):
    """``G_a * H_a + (1 - G_a) * G_b * H_b``."""
    shapes = {tuple(t.shape) for t in (H_a, H_b, G_a, G_b)}
    if len(shapes) != 1:
        raise OpError(f"gated_fuse: shapes differ: {[t.shape for t in (H_a, H_b, G_a, G_b)]}")
    return ad.add(ad.mul(G_a, H_a), ad.mul(ad.sub(1.0, G_a), ad.mul(G_b, H_b)))
