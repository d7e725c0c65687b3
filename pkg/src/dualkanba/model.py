"""End-to-end model: interaction front-ends, the two KanbaFormer stacks,
multimodal fusion and the classifier, plus checkpoint I/O.

Inputs may be single samples (``(n, d_in)`` arrays) or stacked batches
(``(B, n, d_in)``); every block broadcasts over leading axes.
"""

import dataclasses
import struct
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .adsa import AdsaConfig, AdsaParams, adsa_forward, init_adsa
from .autodiff import OpError, Tensor
from .layers import (
    AviParams,
    DyTParams,
    FfnParams,
    GateConvParams,
    KanParams,
    LayerNormParams,
    MhcaParams,
    ati_forward,
    avi_forward,
    dyt_forward,
    ffn_forward,
    gate_map,
    gated_fuse,
    init_avi,
    init_dyt,
    init_ffn,
    init_gate_conv,
    init_kan,
    init_layernorm,
    init_mhca,
    kan_forward,
    layernorm_forward,
)
from .mamba import MambaConfig, MambaParams, init_mamba, mamba_forward
from .params import named_parameters, rng_stream, xavier, zeros

CLASS_NAMES = ("negative", "neutral", "positive")

ABLATIONS = {
    # component name -> config overrides that remove it
    "mamba": {"use_mamba": False},
    "kanformer": {"use_kanformer": False},
    "kan": {"feedforward": "ffn"},
    "dyt": {"norm": "layernorm"},
    "intra_fusion": {"intra_fusion": "ffn"},
    "multi_fusion": {"multi_fusion": "ffn"},
    "visual": {"use_visual": False},
}


@dataclass
class KanConfig:
    grid_size: int = 5
    order: int = 3
    grid_range: float = 2.0


@dataclass
class ModelConfig:
    d: int = 32
    heads: int = 2
    n_layers: int = 2
    d_in: int = 16
    d_img: int = 16
    ts: int = 128
    ti: int = 49
    ta: int = 2
    dropout: float = 0.5
    seed: int = 0
    n_classes: int = 3
    dtype: str = "float64"
    gate_width: int = 3
    adsa: AdsaConfig = field(default_factory=AdsaConfig)
    mamba: MambaConfig = field(default_factory=MambaConfig)
    kan: KanConfig = field(default_factory=KanConfig)
    use_mamba: bool = True
    use_kanformer: bool = True
    use_visual: bool = True
    feedforward: str = "kan"        # kan | ffn
    norm: str = "dyt"               # dyt | layernorm
    intra_fusion: str = "gated"     # gated | ffn | sum
    multi_fusion: str = "gated"     # gated | ffn | sum

    def validate(self):
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.n_classes != 3:
            raise ValueError("only three polarity classes are supported")
        if self.feedforward not in ("kan", "ffn"):
            raise ValueError(f"feedforward must be 'kan' or 'ffn', got {self.feedforward!r}")
        if self.norm not in ("dyt", "layernorm"):
            raise ValueError(f"norm must be 'dyt' or 'layernorm', got {self.norm!r}")
        for name in ("intra_fusion", "multi_fusion"):
            if getattr(self, name) not in ("gated", "ffn", "sum"):
                raise ValueError(f"{name} must be gated, ffn or sum")
        self.adsa.validate()

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def ablated(self, component):
        try:
            changes = ABLATIONS[component]
        except KeyError:
            raise ValueError(f"unknown component {component!r}; choose from {sorted(ABLATIONS)}") from None
        return dataclasses.replace(self, **changes)


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

@dataclass
class KanFormerParams:
    adsa: AdsaParams
    norm1: object
    ff: object
    norm2: object


@dataclass
class KanbaLayerParams:
    kanformer: Optional[KanFormerParams]
    mamba: Optional[MambaParams]
    gate_k: Optional[GateConvParams] = None
    gate_m: Optional[GateConvParams] = None
    fuse_ffn: Optional[FfnParams] = None


@dataclass
class ClassifierParams:
    w: Tensor   # (d, 3)
    b: Tensor   # (3,)


@dataclass
class ModelParams:
    ati: MhcaParams
    classifier: ClassifierParams
    textual: List[KanbaLayerParams]
    text_proj: Optional[Tensor] = None
    avi: Optional[AviParams] = None
    visual: Optional[List[KanbaLayerParams]] = None
    gate_t: Optional[GateConvParams] = None
    gate_v: Optional[GateConvParams] = None
    fuse_ffn: Optional[FfnParams] = None

    def named(self):
        return dict(named_parameters(self))


def _matched_hidden(d, kan):
    # hidden width giving the perceptron roughly the KAN's parameter count
    kan_params = d * d * (kan.grid_size + kan.order + 1)
    return max(1, round((kan_params - d) / (2 * d + 1)))


def init_kanformer(seed, name, cfg):
    dt = cfg.np_dtype
    d = cfg.d
    rng = rng_stream(seed, name + ".adsa")
    adsa = init_adsa(rng, d, cfg.heads, cfg.adsa, dt)
    if cfg.norm == "dyt":
        norm1, norm2 = init_dyt(d, dtype=dt), init_dyt(d, dtype=dt)
    else:
        norm1, norm2 = init_layernorm(d, dt), init_layernorm(d, dt)
    rng = rng_stream(seed, name + ".ff")
    if cfg.feedforward == "kan":
        ff = init_kan(rng, d, d, cfg.kan.grid_size, cfg.kan.order, cfg.kan.grid_range, dt)
    else:
        ff = init_ffn(rng, d, _matched_hidden(d, cfg.kan), d, dt)
    return KanFormerParams(adsa=adsa, norm1=norm1, ff=ff, norm2=norm2)


def init_kanbaformer(seed, name, cfg):
    """Parameters for ``cfg.n_layers`` stacked KanbaFormer layers under stream prefix ``name``."""
    dt = cfg.np_dtype
    layers = []
    for i in range(cfg.n_layers):
        prefix = f"{name}.{i}"
        kf = init_kanformer(seed, prefix + ".kanformer", cfg) if cfg.use_kanformer else None
        mb = init_mamba(rng_stream(seed, prefix + ".mamba"), cfg.d, cfg.mamba, dt) if cfg.use_mamba else None
        layer = KanbaLayerParams(kanformer=kf, mamba=mb)
        if kf is not None and mb is not None:
            rng = rng_stream(seed, prefix + ".fusion")
            if cfg.intra_fusion == "gated":
                layer.gate_k = init_gate_conv(rng, cfg.d, cfg.gate_width, dt)
                layer.gate_m = init_gate_conv(rng, cfg.d, cfg.gate_width, dt)
            elif cfg.intra_fusion == "ffn":
                layer.fuse_ffn = init_ffn(rng, 2 * cfg.d, cfg.d, cfg.d, dt)
        layers.append(layer)
    return layers


def init_model(cfg):
    cfg.validate()
    seed, dt, d = cfg.seed, cfg.np_dtype, cfg.d
    p = ModelParams(
        ati=init_mhca(rng_stream(seed, "ati"), d, cfg.heads, dt),
        classifier=ClassifierParams(w=xavier(rng_stream(seed, "classifier"), d, cfg.n_classes, dt),
                                    b=zeros(cfg.n_classes, dtype=dt)),
        textual=init_kanbaformer(seed, "textual", cfg),
    )
    if cfg.d_in != d:
        p.text_proj = xavier(rng_stream(seed, "text_proj"), cfg.d_in, d, dt)
    if cfg.use_visual:
        p.avi = init_avi(rng_stream(seed, "avi"), d, cfg.d_img, cfg.heads, dt)
        p.visual = init_kanbaformer(seed, "visual", cfg)
        rng = rng_stream(seed, "multimodal_fusion")
        if cfg.multi_fusion == "gated":
            p.gate_t = init_gate_conv(rng, d, 1, dt)
            p.gate_v = init_gate_conv(rng, d, 1, dt)
        elif cfg.multi_fusion == "ffn":
            p.fuse_ffn = init_ffn(rng, 2 * d, d, d, dt)
    return p


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------

def _norm(x, p):
    if isinstance(p, DyTParams):
        return dyt_forward(x, p)
    if isinstance(p, LayerNormParams):
        return layernorm_forward(x, p)
    raise TypeError(f"unknown normaliser {type(p).__name__}")


def _feedforward(x, p):
    if isinstance(p, KanParams):
        return kan_forward(x, p)
    return ffn_forward(x, p)


def kanformer_block(H, p, cfg):
    """``y1 = norm(ADSA(H) + H)``, ``y2 = norm(KAN(y1) + y1)``."""
    y1 = _norm(ad.add(adsa_forward(H, cfg.adsa, p.adsa), H), p.norm1)
    return _norm(ad.add(_feedforward(y1, p.ff), y1), p.norm2)


def kanbaformer_layer(H, p, cfg):
    h_k = kanformer_block(H, p.kanformer, cfg) if p.kanformer is not None else None
    h_m = mamba_forward(H, p.mamba) if p.mamba is not None else None
    if h_k is None and h_m is None:
        return H
    if h_m is None:
        return h_k
    if h_k is None:
        return h_m
    if p.gate_k is not None:
        return gated_fuse(h_k, h_m, gate_map(h_k, p.gate_k), gate_map(h_m, p.gate_m))
    if p.fuse_ffn is not None:
        return ffn_forward(ad.concat([h_k, h_m], axis=-1), p.fuse_ffn)
    return ad.add(h_k, h_m)


def kanbaformer_forward(H, layers, cfg):
    for layer in layers:
        H = kanbaformer_layer(H, layer, cfg)
    return H


def multimodal_fuse(H_T, H_V, p):
    """Mean-pool both modalities to vectors and combine them (gated by default)."""
    t = ad.mean_rows(H_T)
    v = ad.mean_rows(H_V)
    if p.gate_t is not None:
        return gated_fuse(v, t, gate_map(v, p.gate_v), gate_map(t, p.gate_t))
    if p.fuse_ffn is not None:
        both = ad.concat([t, v], axis=-1)
        if both.ndim == 1:
            return ad.reshape(ffn_forward(ad.reshape(both, (1, -1)), p.fuse_ffn), (-1,))
        return ffn_forward(both, p.fuse_ffn)
    return ad.add(t, v)


def classifier_logits(H_C, p):
    if H_C.ndim == 1:
        return ad.reshape(classifier_logits(ad.reshape(H_C, (1, -1)), p), (-1,))
    return ad.add(ad.matmul(H_C, p.w), p.b)


def classify(H_C, p):
    """Class probabilities ``softmax(H_C W + b)``."""
    return ad.softmax(classifier_logits(H_C, p))


def _check_dims(text, visual, aspect, cfg):
    for name, arr, want in (("text", text, cfg.d_in), ("aspect", aspect, cfg.d_in), ("visual", visual, cfg.d_img)):
        if arr.shape[-1] != want:
            raise OpError(f"{name} stage: feature dim {arr.shape[-1]} does not match config ({want})")
        if arr.ndim not in (2, 3):
            raise OpError(f"{name} stage: expected (n, d) or (B, n, d) features, got shape {arr.shape}")


def model_logits(text, visual, aspect, params, cfg, train=False, rng=None):
    """Logits ``(..., 3)`` for one sample or a batch of stacked samples."""
    text, visual, aspect = (np.asarray(a, dtype=cfg.np_dtype) for a in (text, visual, aspect))
    _check_dims(text, visual, aspect, cfg)
    rate = cfg.dropout if train else 0.0
    if train and rate > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    H_S, H_A = Tensor(text), Tensor(aspect)
    if params.text_proj is not None:
        H_S = ad.matmul(H_S, params.text_proj)
        H_A = ad.matmul(H_A, params.text_proj)
    H_AS = ad.dropout(ati_forward(H_S, H_A, params.ati), rate, rng, train)
    H_T = kanbaformer_forward(H_AS, params.textual, cfg)
    if cfg.use_visual:
        H_GI = ad.dropout(avi_forward(H_AS, Tensor(visual), params.avi), rate, rng, train)
        H_V = kanbaformer_forward(H_GI, params.visual, cfg)
        H_C = multimodal_fuse(H_T, H_V, params)
    else:
        H_C = ad.mean_rows(H_T)
    H_C = ad.dropout(H_C, rate, rng, train)
    return classifier_logits(H_C, params.classifier)


def model_forward(sample, params, cfg, mode="eval", rng=None):
    """Probability distribution over the three polarities.

    ``sample`` is anything with ``text_features``, ``visual_features`` and
    ``aspect_features``; dropout is only active when ``mode == "train"``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    logits = model_logits(sample.text_features, sample.visual_features, sample.aspect_features,
                          params, cfg, train=(mode == "train"), rng=rng)
    return ad.softmax(logits)


def loss(probs, label):
    """Negative log-likelihood of ``label`` under ``probs`` (mean over a batch)."""
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if labels.size and (labels.min() < 0 or labels.max() > 2):
        raise ValueError(f"label out of range: {label}")
    p = probs if probs.ndim >= 2 else ad.reshape(probs, (1, -1))
    return ad.scale(ad.tsum(ad.log(ad.pick(p, labels))), -1.0 / labels.size)


def cross_entropy(logits, labels):
    """Mean cross-entropy computed from logits via log-softmax."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.size and (labels.min() < 0 or labels.max() > 2):
        raise ValueError(f"label out of range: {labels}")
    z = logits if logits.ndim >= 2 else ad.reshape(logits, (1, -1))
    return ad.scale(ad.tsum(ad.pick(ad.log_softmax(z), labels)), -1.0 / labels.size)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

MAGIC = b"DKBF"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, params):
    """Serialise every named parameter (values stored as little-endian f32)."""
    items = params.named() if isinstance(params, ModelParams) else dict(params)
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(items))]
    for name in sorted(items):
        arr = items[name]
        arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(np.asarray(arr.shape, dtype="<u8").tobytes())
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_checkpoint(path):
    """Return ``{name: float32 array}`` from a checkpoint file."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 4
    try:
        version, count = struct.unpack_from("<II", buf, pos)
        pos += 8
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = tuple(int(s) for s in np.frombuffer(buf, dtype="<u8", count=rank, offset=pos))
            pos += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(buf):
                raise CheckpointError(f"{path}: truncated entry {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
            pos += 4 * size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated file ({exc})") from None
    return out


def load_checkpoint(path, cfg):
    """Build parameters for ``cfg`` and fill them from ``path``, validating names and shapes."""
    params = init_model(cfg)
    stored = read_checkpoint(path)
    named = params.named()
    missing = sorted(set(named) - set(stored))
    extra = sorted(set(stored) - set(named))
    if missing or extra:
        raise CheckpointError(f"{path}: parameter names differ from config (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, t in named.items():
        if stored[name].shape != t.shape:
            raise CheckpointError(f"{path}: {name} has shape {stored[name].shape}, config expects {t.shape}")
        t.data[...] = stored[name]
    return params


class DualKanbaFormer:
    """Configuration plus parameters, with batched prediction helpers."""

    def __init__(self, cfg, params=None):
        self.cfg = cfg
        self.params = params if params is not None else init_model(cfg)

    def named_parameters(self):
        return self.params.named()

    def logits(self, text, visual, aspect, train=False, rng=None):
        return model_logits(text, visual, aspect, self.params, self.cfg, train=train, rng=rng)

    def predict_proba(self, samples, batch_size=256):
        from .data import shape_groups, stack

        out = np.zeros((len(samples), self.cfg.n_classes))
        with ad.no_grad():
            for group in shape_groups(samples):
                for start in range(0, len(group), batch_size):
                    idx = group[start:start + batch_size]
                    text, visual, aspect, _ = stack([samples[i] for i in idx])
                    out[idx] = ad.softmax(self.logits(text, visual, aspect)).data
        return out

    def predict(self, samples):
        return np.argmax(self.predict_proba(samples), axis=-1)

    def state_dict(self):
        return {k: t.data.copy() for k, t in self.params.named().items()}

    def load_state_dict(self, state):
        named = self.params.named()
        if set(state) != set(named):
            raise CheckpointError("state names do not match the model")
        for k, t in named.items():
            t.data[...] = state[k]

    def save(self, path):
        write_checkpoint(path, self.params)

    @classmethod
    def load(cls, path, cfg):
        return cls(cfg, load_checkpoint(path, cfg))
