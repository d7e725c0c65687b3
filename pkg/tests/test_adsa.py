import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualkanba import autodiff as ad
from dualkanba.adsa import (
    AdsaConfig, adsa_branches, adsa_forward, attended_kv_count, block_offsets, branch_attention,
    compress_kv, compressed_block_count, dense_attention, init_adsa, proximity_indices, scope_scores,
    select_focus_blocks,
)
from dualkanba.autodiff import Tensor

from . import oracles


def T(a):
    return Tensor(np.asarray(a, dtype=float))


def force_gates(p, scope, focus, prox, level=60.0):
    p.w_gate.data[:] = 0.0
    p.b_gate.data = np.array([level if g else -level for g in (scope, focus, prox)])


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------

@pytest.mark.parametrize("n,want", [(128, 63), (3, 0), (4, 1), (5, 1), (6, 2)])
def test_compressed_block_count(n, want):
    assert compressed_block_count(n, 4, 2) == want


def test_offsets_start_at_zero():
    np.testing.assert_array_equal(block_offsets(10, 4, 2), [0, 2, 4, 6])


def test_short_sequence_has_no_scope_branch():
    rng = np.random.default_rng(0)
    p = init_adsa(rng, 4, 1, AdsaConfig())
    br = adsa_branches(T(rng.normal(size=(3, 4))), AdsaConfig(), p)
    assert br.k_scope is None and br.k_focus is None
    assert adsa_forward(T(rng.normal(size=(3, 4))), AdsaConfig(), p).shape == (3, 4)


def test_attended_count_at_128():
    c = attended_kv_count(128, AdsaConfig())
    assert (c["compressed"], c["focus"], c["proximity"], c["total"]) == (63, 8, 2, 73)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 600), st.integers(1, 6), st.integers(1, 4), st.integers(1, 4), st.integers(1, 8))
def test_attended_count_bound(n, block, stride, n_sel, window):
    stride = min(stride, block)
    cfg = AdsaConfig(block=block, stride=stride, sel_block=block, n_sel=n_sel, window=window)
    c = attended_kv_count(n, cfg)
    assert c["total"] <= compressed_block_count(n, block, stride) + n_sel * block + window


# --------------------------------------------------------------------------
# scope scores and selection
# --------------------------------------------------------------------------

def test_identical_compressed_keys_uniform():
    P = scope_scores(T(np.random.default_rng(1).normal(size=(5, 3))), T(np.ones((4, 3))), 3.0)
    np.testing.assert_allclose(P.data, 0.25, atol=1e-15)


def test_single_compressed_key_scores_one():
    P = scope_scores(T(np.random.default_rng(1).normal(size=(5, 3))), T(np.ones((1, 3))), 3.0)
    np.testing.assert_array_equal(P.data, 1.0)


def test_orthogonal_query_uniform():
    P = scope_scores(T([[1.0, 0.0]]), T([[0.0, 1.0], [0.0, -2.0], [0.0, 5.0]]), 2.0)
    np.testing.assert_allclose(P.data, 1 / 3, atol=1e-15)


def test_selection_tie_goes_low():
    cfg = AdsaConfig(n_sel=2)
    selected, tokens = select_focus_blocks(np.array([[0.1, 0.5, 0.2, 0.2]]), cfg, 10)
    np.testing.assert_array_equal(selected, [[1, 2]])
    np.testing.assert_array_equal(tokens, [[2, 3, 4, 5, 4, 5, 6, 7]])


def test_selection_takes_all_when_few_blocks():
    selected, _ = select_focus_blocks(np.array([[0.7, 0.3]]), AdsaConfig(n_sel=3), 6)
    np.testing.assert_array_equal(selected, [[0, 1]])


def test_selection_decreasing_row_takes_first():
    selected, _ = select_focus_blocks(np.array([[0.4, 0.3, 0.2, 0.1]]), AdsaConfig(n_sel=2), 10)
    np.testing.assert_array_equal(selected, [[0, 1]])


def test_selection_with_disjoint_candidate_blocks():
    # candidates of length 2 at {0, 2, 4}; compressed blocks of 4 at {0, 2}
    cfg = AdsaConfig(block=4, stride=2, sel_block=2, n_sel=1)
    selected, tokens = select_focus_blocks(np.array([[0.2, 0.8]]), cfg, 6)
    # candidate 1 (tokens 2..3) overlaps both compressed blocks and scores 1.0
    np.testing.assert_array_equal(selected, [[1]])
    np.testing.assert_array_equal(tokens, [[2, 3]])


# --------------------------------------------------------------------------
# proximity
# --------------------------------------------------------------------------

def test_suffix_window():
    np.testing.assert_array_equal(proximity_indices(10, AdsaConfig(window=2)), [8, 9])


def test_suffix_window_clipped():
    np.testing.assert_array_equal(proximity_indices(1, AdsaConfig(window=2)), [0])


def test_sliding_window_at_start_and_end():
    idx = proximity_indices(6, AdsaConfig(window=2, proximity_mode="sliding"))
    np.testing.assert_array_equal(idx[0], [0, 1])
    np.testing.assert_array_equal(idx[-1], [4, 5])
    assert idx.shape == (6, 2)
    idx3 = proximity_indices(6, AdsaConfig(window=3, proximity_mode="sliding"))
    np.testing.assert_array_equal(idx3[2], [1, 2, 3])


# --------------------------------------------------------------------------
# branch attention
# --------------------------------------------------------------------------

def test_branch_single_key_returns_value():
    v = np.array([[1.5, -2.0]])
    out = branch_attention(T(np.random.default_rng(0).normal(size=(3, 2))), T([[0.3, 0.1]]), T(v), 2.0)
    np.testing.assert_array_equal(out.data, np.tile(v, (3, 1)))


def test_branch_identical_keys_average_values():
    out = branch_attention(T([[1.0, 2.0]]), T([[0.5, 0.5], [0.5, 0.5]]), T([[1.0, 0.0], [3.0, 4.0]]), 2.0)
    np.testing.assert_allclose(out.data, [[2.0, 2.0]], atol=1e-15)


def test_branch_kernel_uses_plain_temperature():
    d_k = 2.0
    q = T([[d_k * math.log(3), 0.0]])
    out = branch_attention(q, T([[1.0, 0.0], [0.0, 0.0]]), T([[1.0, 0.0], [0.0, 1.0]]), d_k)
    np.testing.assert_allclose(out.data, [[0.75, 0.25]], atol=1e-15)


def test_branch_weights_normalised():
    rng = np.random.default_rng(2)
    q, k = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    w = oracles.softmax(q @ k.T / 3.0)
    out = branch_attention(T(q), T(k), T(np.eye(5, 3)), 3.0)
    np.testing.assert_allclose(out.data, w @ np.eye(5, 3), atol=1e-14)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-15)


# --------------------------------------------------------------------------
# full layer
# --------------------------------------------------------------------------

def degeneration_case(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 13))
    heads = int(rng.choice([1, 2]))
    d = 4 * heads
    cfg = AdsaConfig(window=n + int(rng.integers(0, 3)))
    p = init_adsa(rng, d, heads, cfg)
    force_gates(p, 0, 0, 1)
    H = rng.normal(size=(n, d))
    want = oracles.dense_kernel_attention(H, p.w_q.data, p.w_k.data, p.w_v.data, heads, d // heads)
    return adsa_forward(T(H), cfg, p).data, want


@pytest.mark.parametrize("seed", range(10))
def test_wide_window_equals_dense_oracle(seed):
    got, want = degeneration_case(seed)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-10)


def test_dense_attention_helper_matches_oracle():
    rng = np.random.default_rng(3)
    cfg = AdsaConfig()
    p = init_adsa(rng, 8, 2, cfg)
    H = rng.normal(size=(7, 8))
    want = oracles.dense_kernel_attention(H, p.w_q.data, p.w_k.data, p.w_v.data, 2, 4)
    np.testing.assert_allclose(dense_attention(T(H), cfg, p).data, want, atol=1e-12)


def test_closed_gates_zero_output():
    rng = np.random.default_rng(4)
    cfg = AdsaConfig()
    p = init_adsa(rng, 8, 2, cfg)
    force_gates(p, 0, 0, 0, level=30.0)
    np.testing.assert_allclose(adsa_forward(T(rng.normal(size=(12, 8))), cfg, p).data, 0.0, atol=1e-9)


def test_scope_only_matches_hand_computation():
    rng = np.random.default_rng(5)
    cfg = AdsaConfig()
    p = init_adsa(rng, 4, 1, cfg)
    force_gates(p, 1, 0, 0)
    H = rng.normal(size=(9, 4))
    out, br = adsa_forward(T(H), cfg, p, return_branches=True)
    q = H @ p.w_q.data
    w = oracles.softmax(q @ br.k_scope.data[0].T / 4.0)
    np.testing.assert_allclose(out.data, w @ br.v_scope.data[0], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 20), st.sampled_from(["suffix", "sliding"]))
def test_output_shape_and_finiteness(seed, n, mode):
    rng = np.random.default_rng(seed)
    cfg = AdsaConfig(proximity_mode=mode, window=3)
    p = init_adsa(rng, 8, 2, cfg)
    out = adsa_forward(T(rng.normal(size=(2, n, 8))), cfg, p)
    assert out.shape == (2, n, 8) and np.all(np.isfinite(out.data))


def test_batched_equals_per_sample():
    rng = np.random.default_rng(6)
    cfg = AdsaConfig()
    p = init_adsa(rng, 8, 2, cfg)
    H = rng.normal(size=(3, 10, 8))
    batched = adsa_forward(T(H), cfg, p).data
    for b in range(3):
        np.testing.assert_allclose(batched[b], adsa_forward(T(H[b]), cfg, p).data, atol=1e-13)


def test_repeated_block_pattern_gives_identical_compressed_keys():
    rng = np.random.default_rng(7)
    cfg = AdsaConfig(block=4, stride=4)
    p = init_adsa(rng, 4, 1, cfg)
    half = rng.normal(size=(8, 4))
    K, V = compress_kv(T(np.vstack([half, half])), T(np.vstack([half, half])), cfg, p)
    np.testing.assert_allclose(K.data[:2], K.data[2:], atol=1e-15)
    np.testing.assert_allclose(V.data[:2], V.data[2:], atol=1e-15)


def test_selection_is_constant_for_gradients():
    rng = np.random.default_rng(8)
    cfg = AdsaConfig()
    p = init_adsa(rng, 4, 1, cfg)
    H = T(rng.normal(size=(10, 4)))
    H.requires_grad = True
    with ad.Tape() as tape:
        ad.backward(ad.tsum(adsa_forward(H, cfg, p)))
    assert "topk" not in {node.kind for node in tape.nodes}
    assert np.all(np.isfinite(H.grad))
