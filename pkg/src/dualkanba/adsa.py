"""Aspect-driven sparse attention.

Every query attends over three key/value branches:

* scope: overlapping blocks of ``block`` tokens taken every ``stride`` tokens,
  each compressed to a single key/value by a small perceptron with in-block
  position embeddings;
* focus: the raw tokens of the ``n_sel`` blocks that score highest under the
  scope attention (selection is a constant of the forward pass);
* proximity: a window of ``window`` tokens, either the sequence suffix shared by
  every query or a per-query window.

Branch outputs are mixed per position by sigmoid gates computed from the input.
Attention logits are divided by the per-head dimension (``sqrt_temperature``
switches to the square root).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import merge_heads, split_heads
from .params import static, xavier, zeros

BRANCHES = ("scope", "focus", "proximity")


@dataclass
class AdsaConfig:
    block: int = 4
    stride: int = 2
    sel_block: int = 4
    n_sel: int = 2
    window: int = 2
    proximity_mode: str = "suffix"
    sqrt_temperature: bool = False

    def validate(self):
        for name in ("block", "stride", "sel_block", "n_sel", "window"):
            if getattr(self, name) < 1:
                raise ValueError(f"adsa.{name} must be >= 1, got {getattr(self, name)}")
        if self.proximity_mode not in ("suffix", "sliding"):
            raise ValueError(f"adsa.proximity_mode must be 'suffix' or 'sliding', got {self.proximity_mode!r}")


@dataclass
class CompressorParams:
    pos: Tensor     # (block, d_h)
    w1: Tensor      # (block * d_h, hidden)
    b1: Tensor
    w2: Tensor      # (hidden, d_h)
    b2: Optional[Tensor] = None


@dataclass
class AdsaParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    phi_k: CompressorParams
    phi_v: CompressorParams
    w_gate: Tensor  # (d, 3)
    b_gate: Tensor  # (3,)
    heads: int = static(1)


def _init_compressor(rng, block, d_h, dtype, out_bias=True):
    hidden = 2 * d_h
    return CompressorParams(
        pos=ad.Tensor(rng.normal(0.0, 0.02, size=(block, d_h)).astype(dtype), requires_grad=True),
        w1=xavier(rng, block * d_h, hidden, dtype),
        b1=zeros(hidden, dtype=dtype),
        w2=xavier(rng, hidden, d_h, dtype),
        b2=zeros(d_h, dtype=dtype) if out_bias else None,
    )


def init_adsa(rng, d, heads, cfg, dtype=np.float64):
    if d % heads:
        raise ValueError(f"model dim {d} is not divisible by {heads} heads")
    d_h = d // heads
    return AdsaParams(
        w_q=xavier(rng, d, d, dtype),
        w_k=xavier(rng, d, d, dtype),
        w_v=xavier(rng, d, d, dtype),
        # a bias shared by all compressed keys cancels in the scope softmax
        phi_k=_init_compressor(rng, cfg.block, d_h, dtype, out_bias=False),
        phi_v=_init_compressor(rng, cfg.block, d_h, dtype),
        w_gate=xavier(rng, d, 3, dtype),
        b_gate=zeros(3, dtype=dtype),
        heads=heads,
    )


@dataclass
class AdsaBranches:
    """Intermediate state of one forward pass (keys/values per branch, scores, selection)."""
    q: Tensor
    k: Tensor
    v: Tensor
    gates: Tensor
    k_scope: Optional[Tensor] = None
    v_scope: Optional[Tensor] = None
    scores: Optional[Tensor] = None
    selected: Optional[np.ndarray] = None
    focus_tokens: Optional[np.ndarray] = None
    k_focus: Optional[Tensor] = None
    v_focus: Optional[Tensor] = None
    proximity_tokens: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    k_prox: Optional[Tensor] = None
    v_prox: Optional[Tensor] = None


# --------------------------------------------------------------------------
# geometry (pure index arithmetic)
# --------------------------------------------------------------------------

def compressed_block_count(n, block, stride):
    return (n - block) // stride + 1 if n >= block else 0


def block_offsets(n, block, stride):
    return np.arange(compressed_block_count(n, block, stride), dtype=np.int64) * stride


def selection_spans(n, cfg):
    """Start offsets of the candidate focus blocks (each ``sel_block`` long)."""
    if cfg.sel_block == cfg.block:
        return block_offsets(n, cfg.block, cfg.stride)
    return np.arange(n // cfg.sel_block, dtype=np.int64) * cfg.sel_block


def proximity_indices(n, cfg):
    """Token indices of the proximity window: ``(w',)`` for suffix, ``(n, w')`` for sliding."""
    w = min(cfg.window, n)
    if cfg.proximity_mode == "suffix":
        return np.arange(n - w, n, dtype=np.int64)
    start = np.clip(np.arange(n) - (w - 1) // 2, 0, n - w)
    return start[:, None] + np.arange(w, dtype=np.int64)[None, :]


def attended_kv_count(n, cfg):
    """Number of keys each query attends to, per branch and in total."""
    m = compressed_block_count(n, cfg.block, cfg.stride)
    n_cand = len(selection_spans(n, cfg)) if m else 0
    focus = min(cfg.n_sel, n_cand) * cfg.sel_block
    prox = min(cfg.window, n)
    return {"compressed": m, "focus": focus, "proximity": prox, "total": m + focus + prox}


def _temperature(d_h, cfg):
    return float(np.sqrt(d_h)) if cfg.sqrt_temperature else float(d_h)


# --------------------------------------------------------------------------
# branch operations
# --------------------------------------------------------------------------

def _compress(X, offsets, block, phi):
    idx = offsets[:, None] + np.arange(block, dtype=np.int64)[None, :]
    *lead, n, d_h = X.shape
    m = len(offsets)
    blocks = ad.reshape(ad.take_rows(X, idx.reshape(-1)), (*lead, m, block, d_h))
    blocks = ad.add(blocks, phi.pos)
    flat = ad.reshape(blocks, (*lead, m, block * d_h))
    hidden = ad.silu(ad.add(ad.matmul(flat, phi.w1), phi.b1))
    out = ad.matmul(hidden, phi.w2)
    return out if phi.b2 is None else ad.add(out, phi.b2)


def compress_kv(K, V, cfg, params):
    """Compressed scope keys/values ``(..., m, d_h)``, or ``(None, None)`` when no block fits."""
    offsets = block_offsets(K.shape[-2], cfg.block, cfg.stride)
    if len(offsets) == 0:
        return None, None
    return _compress(K, offsets, cfg.block, params.phi_k), _compress(V, offsets, cfg.block, params.phi_v)


def scope_scores(q, K_scope, temperature):
    """Row-softmax of ``q K^T / temperature`` over the compressed blocks."""
    return ad.softmax(ad.scale(ad.matmul(q, ad.transpose(K_scope)), 1.0 / temperature))


def select_focus_blocks(P, cfg, n):
    """Ascending indices of the ``n_sel`` best blocks per query, ties to the lower index.

    Returns ``(selected, token_idx)``: candidate block ids ``(..., n, k)`` and the
    raw token indices they cover ``(..., n, k * sel_block)``.
    """
    scores = P.data if isinstance(P, Tensor) else np.asarray(P)
    spans = selection_spans(n, cfg)
    if cfg.sel_block != cfg.block:
        # a candidate block inherits the scores of every compressed block overlapping it
        comp = block_offsets(n, cfg.block, cfg.stride)
        overlap = (comp[:, None] < spans[None, :] + cfg.sel_block) & (spans[None, :] < comp[:, None] + cfg.block)
        scores = scores @ overlap.astype(scores.dtype)
    selected = ad.topk_indices(scores, cfg.n_sel, axis=-1)
    starts = spans[selected]
    tokens = starts[..., None] + np.arange(cfg.sel_block, dtype=np.int64)
    return selected, tokens.reshape(*selected.shape[:-1], -1)


def proximity_kv(K, V, cfg):
    idx = proximity_indices(K.shape[-2], cfg)
    if idx.ndim == 1:
        return ad.take_rows(K, idx), ad.take_rows(V, idx), idx
    *lead, n, d_h = K.shape
    shape = (*lead, n, idx.shape[1], d_h)
    return (ad.reshape(ad.take_rows(K, idx.reshape(-1)), shape),
            ad.reshape(ad.take_rows(V, idx.reshape(-1)), shape), idx)


def branch_attention(q, K, V, temperature):
    """``sum_i exp(q.k_i / T) v_i / sum_j exp(q.k_j / T)`` for every query.

    ``K``/``V`` are either shared by all queries, ``(..., s, d_h)``, or given per
    query, ``(..., n, s, d_h)`` with ``n`` matching ``q``.
    """
    if K.ndim == q.ndim + 1:
        *lead, n, d_h = q.shape
        q4 = ad.reshape(q, (*lead, n, 1, d_h))
        w = ad.softmax(ad.scale(ad.matmul(q4, ad.transpose(K)), 1.0 / temperature))
        return ad.reshape(ad.matmul(w, V), (*lead, n, d_h))
    w = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(K)), 1.0 / temperature))
    return ad.matmul(w, V)


def adsa_branches(H, cfg, params):
    """Project ``H`` and build every branch without mixing them."""
    h = params.heads
    n = H.shape[-2]
    d_h = H.shape[-1] // h
    q = split_heads(ad.matmul(H, params.w_q), h)
    k = split_heads(ad.matmul(H, params.w_k), h)
    v = split_heads(ad.matmul(H, params.w_v), h)
    gates = ad.sigmoid(ad.add(ad.matmul(H, params.w_gate), params.b_gate))
    br = AdsaBranches(q=q, k=k, v=v, gates=gates)
    temp = _temperature(d_h, cfg)
    br.k_scope, br.v_scope = compress_kv(k, v, cfg, params)
    if br.k_scope is not None:
        br.scores = scope_scores(q, br.k_scope, temp)
        selected, tokens = select_focus_blocks(br.scores, cfg, n)
        if tokens.shape[-1]:
            br.selected, br.focus_tokens = selected, tokens
            shape = (*k.shape[:-2], n, tokens.shape[-1], d_h)
            flat = tokens.reshape(*tokens.shape[:-2], -1)
            br.k_focus = ad.reshape(ad.take_rows(k, flat, per_lead=True), shape)
            br.v_focus = ad.reshape(ad.take_rows(v, flat, per_lead=True), shape)
    br.k_prox, br.v_prox, br.proximity_tokens = proximity_kv(k, v, cfg)
    return br


def adsa_forward(H, cfg, params, return_branches=False):
    """Gated sum of the scope, focus and proximity attentions; output shape equals ``H``."""
    cfg.validate()
    br = adsa_branches(H, cfg, params)
    d_h = H.shape[-1] // params.heads
    temp = _temperature(d_h, cfg)
    outs = []
    if br.scores is not None:
        outs.append((0, ad.matmul(br.scores, br.v_scope)))
    if br.k_focus is not None:
        outs.append((1, branch_attention(br.q, br.k_focus, br.v_focus, temp)))
    outs.append((2, branch_attention(br.q, br.k_prox, br.v_prox, temp)))
    lead = H.shape[:-2]
    n = H.shape[-2]
    total = None
    for c, o in outs:
        g = ad.reshape(br.gates[..., c:c + 1], (*lead, 1, n, 1))
        term = ad.mul(g, o)
        total = term if total is None else ad.add(total, term)
    out = merge_heads(total)
    if return_branches:
        return out, br
    return out


def dense_attention(H, cfg, params):
    """All-pairs attention with the same projections and kernel, for baselines."""
    h = params.heads
    d_h = H.shape[-1] // h
    q = split_heads(ad.matmul(H, params.w_q), h)
    k = split_heads(ad.matmul(H, params.w_k), h)
    v = split_heads(ad.matmul(H, params.w_v), h)
    return merge_heads(branch_attention(q, k, v, _temperature(d_h, cfg)))
