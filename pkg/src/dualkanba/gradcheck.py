"""Finite-difference gradient suite over every op kind and every composite block.

Each case builds a scalar objective ``sum(R * out)`` with a fixed random
projection ``R``, so every output entry contributes a gradient of order one.
Parameterised blocks get their parameters redrawn before checking (matrices
with standard deviation ``1/sqrt(fan_in)``, vectors with 0.5): at the training
initialisation some Mamba paths carry gradients near 1e-10, where the relative
error measures the rounding noise of the central difference rather than the
backward rules under test.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .adsa import AdsaConfig, adsa_forward, dense_attention, init_adsa
from .autodiff import Tensor
from .layers import (
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
    kan_knots,
    layernorm_forward,
    mhca_forward,
)
from .mamba import MambaConfig, init_mamba, mamba_forward
from .model import (
    ModelConfig,
    init_kanbaformer,
    init_kanformer,
    init_model,
    kanbaformer_layer,
    kanformer_block,
    model_logits,
)
from .params import named_parameters, rng_stream

OP_TOL = 1e-5
COMPOSITE_TOL = 1e-4
PROJECTION_NORM = 0.1
MODULES = ("autodiff", "layers", "adsa", "mamba", "model")


@dataclass
class CheckResult:
    module: str
    name: str
    kind: str        # "op" or "composite"
    error: float
    tol: float
    n_params: int
    seconds: float

    @property
    def passed(self):
        return bool(self.error <= self.tol)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.module}.{self.name:<22s} err={self.error:.3e} tol={self.tol:.0e} "
                f"params={self.n_params} {self.seconds:.2f}s")


def _leaf(rng, *shape, low=None, high=None):
    vals = rng.uniform(low, high, size=shape) if low is not None else rng.normal(size=shape)
    return Tensor(vals, requires_grad=True)


def _projected(out_fn, rng, shape):
    # a short random direction keeps the rounding noise of f well below the
    # 1e-8 absolute floor of the error metric
    R = rng.normal(size=shape)
    R *= PROJECTION_NORM / np.linalg.norm(R)
    return lambda: ad.tsum(ad.mul(out_fn(), Tensor(R)))


def _redraw(tree, rng):
    """Replace every parameter of ``tree`` by fan-in scaled noise and return the tensors."""
    tensors = [t for _, t in named_parameters(tree)]
    for t in tensors:
        shape = t.data.shape
        std = 0.5 if len(shape) < 2 else 1.0 / np.sqrt(np.prod(shape[:-1]))
        t.data = rng.normal(0.0, std, size=shape)
    return tensors


# --------------------------------------------------------------------------
# op cases: name -> builder(rng) returning (f, params)
# --------------------------------------------------------------------------

def _binary(kind):
    def build(rng):
        a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
        if kind == "div":
            b = _leaf(rng, 4, low=0.5, high=2.0)
        return _projected(lambda: ad.apply(kind, (a, b)), rng, (3, 4)), [a, b]
    return build


def _unary(kind, low=None, high=None, shape=(3, 5), **attrs):
    def build(rng):
        x = _leaf(rng, *shape, low=low, high=high)
        out_shape = ad.apply(kind, (Tensor(x.data),), **attrs).shape
        return _projected(lambda: ad.apply(kind, (x,), **attrs), rng, out_shape), [x]
    return build


def _matmul(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
    return _projected(lambda: ad.matmul(a, b), rng, (2, 3, 5)), [a, b]


def _concat(rng):
    a, b = _leaf(rng, 3, 2), _leaf(rng, 3, 4)
    return _projected(lambda: ad.concat([a, b], axis=-1), rng, (3, 6)), [a, b]


def _getitem(rng):
    x = _leaf(rng, 4, 6)
    return _projected(lambda: x[1:3, ::2], rng, (2, 3)), [x]


def _take_rows(rng):
    x = _leaf(rng, 2, 5, 3)
    idx = np.array([4, 0, 0, 2])
    per = np.array([[1, 1, 3], [0, 4, 2]])
    return _projected(lambda: ad.concat([ad.take_rows(x, idx), ad.take_rows(x, per, per_lead=True)], axis=1),
                      rng, (2, 7, 3)), [x]


def _pick(rng):
    x = _leaf(rng, 4, 3)
    idx = np.array([2, 0, 1, 1])
    return _projected(lambda: ad.pick(x, idx), rng, (4,)), [x]


def _reshape(rng):
    x = _leaf(rng, 3, 4)
    return _projected(lambda: ad.reshape(x, (2, 6)), rng, (2, 6)), [x]


def _conv1d(rng):
    x, w, b = _leaf(rng, 2, 6, 3), _leaf(rng, 3, 3, 4), _leaf(rng, 4)
    return _projected(lambda: ad.conv1d(x, w, b), rng, (2, 6, 4)), [x, w, b]


def _causal_conv1d(rng):
    x, w, b = _leaf(rng, 2, 6, 3), _leaf(rng, 2, 3), _leaf(rng, 3)
    return _projected(lambda: ad.causal_conv1d(x, w, b), rng, (2, 6, 3)), [x, w, b]


def _dropout(rng):
    x = _leaf(rng, 4, 5)
    seed = int(rng.integers(2**32))
    return _projected(lambda: ad.dropout(x, 0.3, np.random.default_rng(seed)), rng, (4, 5)), [x]


def _bspline(rng):
    knots = kan_knots(5, 3, 2.0)
    x = _leaf(rng, 3, 4, low=-2.5, high=2.5)
    return _projected(lambda: ad.bspline(x, knots, 3), rng, (3, 4, 8)), [x]


def _selective_scan(rng):
    n, E, N = 6, 3, 4
    u = _leaf(rng, 2, n, E)
    delta = _leaf(rng, 2, n, E, low=0.1, high=1.0)
    A = _leaf(rng, E, N, low=-2.0, high=-0.2)
    B, C, D = _leaf(rng, 2, n, N), _leaf(rng, 2, n, N), _leaf(rng, E)
    return _projected(lambda: ad.selective_scan(u, delta, A, B, C, D), rng, (2, n, E)), [u, delta, A, B, C, D]


OP_CASES = {
    "add": _binary("add"),
    "sub": _binary("sub"),
    "mul": _binary("mul"),
    "div": _binary("div"),
    "scale": _unary("scale", c=-1.7),
    "matmul": _matmul,
    "sum": _unary("sum", axis=0),
    "mean": _unary("mean", axis=-1, keepdims=True),
    "max_rows": _unary("max_rows", shape=(2, 5, 3)),
    "reshape": _reshape,
    "transpose": _unary("transpose", shape=(2, 3, 4), axes=(1, 0, 2)),
    "getitem": _getitem,
    "concat": _concat,
    "take_rows": _take_rows,
    "pick": _pick,
    "softmax": _unary("softmax"),
    "log_softmax": _unary("log_softmax"),
    "sigmoid": _unary("sigmoid"),
    "tanh": _unary("tanh"),
    "silu": _unary("silu"),
    "softplus": _unary("softplus"),
    "exp": _unary("exp"),
    "log": _unary("log", low=0.3, high=3.0),
    "power": _unary("power", low=0.3, high=2.0, p=2.5),
    "conv1d": _conv1d,
    "causal_conv1d": _causal_conv1d,
    "dropout": _dropout,
    "bspline": _bspline,
    "selective_scan": _selective_scan,
}


# --------------------------------------------------------------------------
# layer, attention, scan and model cases
# --------------------------------------------------------------------------

def _mhca(rng):
    p = init_mhca(rng, 6, 2)
    q, kv = _leaf(rng, 5, 6), _leaf(rng, 3, 6)
    return _projected(lambda: mhca_forward(q, kv, p), rng, (5, 6)), [q, kv] + _redraw(p, rng)


def _ati(rng):
    p = init_mhca(rng, 6, 2)
    s, a = _leaf(rng, 5, 6), _leaf(rng, 2, 6)
    return _projected(lambda: ati_forward(s, a, p), rng, (5, 6)), [s, a] + _redraw(p, rng)


def _avi(rng):
    p = init_avi(rng, 6, 4, 2)
    h_as, img = _leaf(rng, 5, 6), _leaf(rng, 4, 4)
    return _projected(lambda: avi_forward(h_as, img, p), rng, (4, 6)), [h_as, img] + _redraw(p, rng)


def _dyt(rng):
    p = init_dyt(5)
    x = _leaf(rng, 4, 5)
    return _projected(lambda: dyt_forward(x, p), rng, (4, 5)), [x] + _redraw(p, rng)


def _layernorm(rng):
    p = init_layernorm(5)
    x = _leaf(rng, 4, 5)
    return _projected(lambda: layernorm_forward(x, p), rng, (4, 5)), [x] + _redraw(p, rng)


def _kan(rng):
    p = init_kan(rng, 4, 3)
    x = _leaf(rng, 5, 4, low=-2.5, high=2.5)
    return _projected(lambda: kan_forward(x, p), rng, (5, 3)), [x] + _redraw(p, rng)


def _ffn(rng):
    p = init_ffn(rng, 4, 6, 3)
    x = _leaf(rng, 5, 4)
    return _projected(lambda: ffn_forward(x, p), rng, (5, 3)), [x] + _redraw(p, rng)


def _gate(width):
    def build(rng):
        p = init_gate_conv(rng, 4, width)
        x = _leaf(rng, 6, 4)
        return _projected(lambda: gate_map(x, p), rng, (6, 4)), [x] + _redraw(p, rng)
    return build


def _gated_fuse(rng):
    ha, hb = _leaf(rng, 5, 4), _leaf(rng, 5, 4)
    ga, gb = _leaf(rng, 5, 4, low=0.05, high=0.95), _leaf(rng, 5, 4, low=0.05, high=0.95)
    return _projected(lambda: gated_fuse(ha, hb, ga, gb), rng, (5, 4)), [ha, hb, ga, gb]


def _adsa(mode, window=2, n=8):
    def build(rng):
        cfg = AdsaConfig(proximity_mode=mode, window=window)
        p = init_adsa(rng, 4, 2, cfg)
        H = _leaf(rng, n, 4)
        return _projected(lambda: adsa_forward(H, cfg, p), rng, (n, 4)), [H] + _redraw(p, rng)
    return build


def _dense(rng):
    cfg = AdsaConfig()
    p = init_adsa(rng, 4, 2, cfg)
    H = _leaf(rng, 6, 4)
    return _projected(lambda: dense_attention(H, cfg, p), rng, (6, 4)), [H] + _redraw(p, rng)


def _mamba(rng):
    p = init_mamba(rng, 4, MambaConfig(d_state=4))
    H = _leaf(rng, 2, 6, 4)
    return _projected(lambda: mamba_forward(H, p), rng, (2, 6, 4)), [H] + _redraw(p, rng)


def _tiny_config():
    return ModelConfig(d=8, heads=2, n_layers=1, d_in=8, d_img=8, ts=6, ti=4, ta=2, dropout=0.0,
                       mamba=MambaConfig(d_state=4))


def _kanformer(rng):
    cfg = _tiny_config()
    p = init_kanformer(0, "check", cfg)
    H = _leaf(rng, 6, 8)
    return _projected(lambda: kanformer_block(H, p, cfg), rng, (6, 8)), [H] + _redraw(p, rng)


def _kanbaformer(rng):
    cfg = _tiny_config()
    p = init_kanbaformer(0, "check", cfg)[0]
    H = _leaf(rng, 6, 8)
    return _projected(lambda: kanbaformer_layer(H, p, cfg), rng, (6, 8)), [H] + _redraw(p, rng)


def _model(rng):
    cfg = _tiny_config()
    p = init_model(cfg)
    # features bounded by 1 keep the cubic x*B*C path of the scan out of saturation
    text, visual, aspect = (rng.uniform(-1.0, 1.0, size=(n, 8)) for n in (6, 4, 2))
    return (_projected(lambda: model_logits(text, visual, aspect, p, cfg), rng, (3,)),
            _redraw(p, rng))


CASES = {
    "autodiff": [(name, "op", OP_CASES[name]) for name in sorted(OP_CASES)],
    "layers": [
        ("mhca_forward", "op", _mhca),
        ("ati_forward", "op", _ati),
        ("avi_forward", "op", _avi),
        ("dyt_forward", "op", _dyt),
        ("layernorm_forward", "op", _layernorm),
        ("kan_forward", "op", _kan),
        ("ffn_forward", "op", _ffn),
        ("gate_map_w3", "op", _gate(3)),
        ("gate_map_w1", "op", _gate(1)),
        ("gated_fuse", "op", _gated_fuse),
    ],
    "adsa": [
        ("adsa_suffix", "op", _adsa("suffix")),
        ("adsa_sliding", "op", _adsa("sliding", window=3)),
        ("adsa_short", "op", _adsa("suffix", n=3)),
        ("dense_attention", "op", _dense),
    ],
    "mamba": [("mamba_forward", "composite", _mamba)],
    "model": [
        ("kanformer_block", "composite", _kanformer),
        ("kanbaformer_layer", "composite", _kanbaformer),
        ("model_forward", "composite", _model),
    ],
}


def run_checks(module=None, eps=1e-4, tol=None, seed=0, on_result=None):
    """Run the cases of ``module`` (all modules when None) and return their results.

    ``tol`` overrides the per-kind tolerances (1e-5 for ops, 1e-4 for composites).
    """
    if module is not None and module not in CASES:
        raise ValueError(f"unknown module {module!r}; choose from {', '.join(MODULES)}")
    results = []
    for mod in ([module] if module else MODULES):
        for name, kind, build in CASES[mod]:
            rng = rng_stream(seed, f"gradcheck.{mod}.{name}")
            f, params = build(rng)
            start = time.perf_counter()
            err = ad.finite_diff_check(f, params, eps=eps)
            limit = tol if tol is not None else (OP_TOL if kind == "op" else COMPOSITE_TOL)
            res = CheckResult(mod, name, kind, float(err), limit, sum(p.data.size for p in params),
                              time.perf_counter() - start)
            results.append(res)
            if on_result is not None:
                on_result(res)
    return results
