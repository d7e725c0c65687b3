"""Attended key/value accounting and wall-clock timing of sparse vs dense attention."""

import csv
import sys
import time

import numpy as np

from . import autodiff as ad
from .adsa import AdsaConfig, adsa_forward, attended_kv_count, dense_attention, init_adsa
from .autodiff import Tensor
from .mamba import MambaConfig, init_mamba, mamba_forward
from .params import rng_stream

DEFAULT_LENGTHS = (64, 128, 256, 512)
FIELDS = ("ts", "compressed", "focus", "proximity", "attended", "dense",
          "total_attended", "total_dense", "adsa_ms", "dense_ms", "mamba_ms")


def _best_ms(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return 1000.0 * best


def break_even_length(cfg, limit=1 << 16):
    """Smallest ``n`` from which every longer sequence attends to fewer than ``n`` keys.

    None when no such ``n`` exists below ``limit`` (e.g. stride 1, where the
    compressed keys alone grow one per token).
    """
    last_dense = 0
    for n in range(1, limit):
        if attended_kv_count(n, cfg)["total"] >= n:
            last_dense = n
        elif n > 4 * (last_dense + cfg.block + cfg.n_sel * cfg.sel_block + cfg.window):
            return last_dense + 1
    return None


def bench_rows(lengths=DEFAULT_LENGTHS, cfg=None, d=32, heads=2, seed=0, repeats=3, timing=True):
    """One row per sequence length: per-query counts, whole-sequence totals and timings."""
    cfg = cfg or AdsaConfig()
    cfg.validate()
    rng = rng_stream(seed, "bench")
    adsa_p = init_adsa(rng, d, heads, cfg)
    mamba_p = init_mamba(rng, d, MambaConfig())
    rows = []
    for n in lengths:
        counts = attended_kv_count(n, cfg)
        row = {"ts": n, "compressed": counts["compressed"], "focus": counts["focus"],
               "proximity": counts["proximity"], "attended": counts["total"], "dense": n,
               "total_attended": n * counts["total"], "total_dense": n * n,
               "adsa_ms": float("nan"), "dense_ms": float("nan"), "mamba_ms": float("nan")}
        if timing:
            H = Tensor(rng.normal(size=(n, d)))
            with ad.no_grad():
                row["adsa_ms"] = _best_ms(lambda: adsa_forward(H, cfg, adsa_p), repeats)
                row["dense_ms"] = _best_ms(lambda: dense_attention(H, cfg, adsa_p), repeats)
                row["mamba_ms"] = _best_ms(lambda: mamba_forward(H, mamba_p), repeats)
        rows.append(row)
    return rows


def write_bench_csv(rows, out=None):
    """Write ``rows`` as CSV to the path ``out`` or to stdout."""
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.3f}" if isinstance(v, float) else v) for k, v in row.items()})
    finally:
        if out:
            fh.close()


def growth_exponent(rows, key="total_attended"):
    """Least-squares slope of ``log(key)`` against ``log(ts)``."""
    x = np.log([r["ts"] for r in rows])
    y = np.log([r[key] for r in rows])
    return float(np.polyfit(x, y, 1)[0])
