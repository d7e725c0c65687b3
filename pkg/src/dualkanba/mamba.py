"""Selective state-space layer (Mamba block) with a sequential scan."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import OpError, Tensor
from .params import param, static, xavier


@dataclass
class MambaConfig:
    d_state: int = 16
    d_conv: int = 2
    expand: int = 2


@dataclass
class MambaParams:
    in_proj: Tensor     # (d, 2 * d_e): main path | gate path
    conv_w: Tensor      # (d_conv, d_e)
    conv_b: Tensor      # (d_e,)
    x_proj: Tensor      # (d_e, dt_rank + 2 * d_state)
    dt_proj: Tensor     # (dt_rank, d_e)
    dt_bias: Tensor     # (d_e,)
    A_log: Tensor       # (d_e, d_state)
    D: Tensor           # (d_e,)
    out_proj: Tensor    # (d_e, d)
    dt_rank: int = static(1)


def init_mamba(rng, d, cfg, dtype=np.float64, dt_min=1e-3, dt_max=1e-1):
    d_e = cfg.expand * d
    dt_rank = max(1, d_e // 16)
    N = cfg.d_state
    dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=d_e))
    bound = 1.0 / np.sqrt(cfg.d_conv)
    return MambaParams(
        in_proj=xavier(rng, d, 2 * d_e, dtype),
        conv_w=param(rng.uniform(-bound, bound, size=(cfg.d_conv, d_e)), dtype),
        conv_b=param(np.zeros(d_e), dtype),
        x_proj=xavier(rng, d_e, dt_rank + 2 * N, dtype),
        dt_proj=xavier(rng, dt_rank, d_e, dtype),
        # inverse softplus so that softplus(dt_bias) == dt
        dt_bias=param(dt + np.log(-np.expm1(-dt)), dtype),
        A_log=param(np.log(np.tile(np.arange(1, N + 1, dtype=np.float64), (d_e, 1))), dtype),
        D=param(np.ones(d_e), dtype),
        out_proj=xavier(rng, d_e, d, dtype),
        dt_rank=dt_rank,
    )


def selective_scan(u, delta, A, B, C, D):
    """Zero-order-hold selective scan.

    ``h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t`` and
    ``y_t = C_t . h_t + D * u_t`` with ``h_0 = 0``; ``A`` is used as given
    (pass the negative real matrix, not its log).
    """
    return ad.selective_scan(u, delta, A, B, C, D)


def mamba_forward(H, p, return_parts=False):
    """``(..., n, d) -> (..., n, d)``: expand, conv + SiLU + scan on one path, SiLU gate on the other."""
    d = p.in_proj.shape[0]
    if H.shape[-1] != d:
        raise OpError(f"mamba: expected feature dim {d}, got {H.shape[-1]}")
    d_e = p.out_proj.shape[0]
    N = p.A_log.shape[1]
    r = p.dt_rank
    xz = ad.matmul(H, p.in_proj)
    x = xz[..., :d_e]
    z = xz[..., d_e:]
    x = ad.silu(ad.causal_conv1d(x, p.conv_w, p.conv_b))
    proj = ad.matmul(x, p.x_proj)
    dt_low = proj[..., :r]
    B = proj[..., r:r + N]
    C = proj[..., r + N:]
    delta = ad.softplus(ad.add(ad.matmul(dt_low, p.dt_proj), p.dt_bias))
    A = ad.scale(ad.exp(p.A_log), -1.0)
    y = selective_scan(x, delta, A, B, C, p.D)
    out = ad.matmul(ad.mul(y, ad.silu(z)), p.out_proj)
    if return_parts:
        return out, {"x": x, "z": z, "delta": delta, "A": A, "B": B, "C": C, "y": y}
    return out
