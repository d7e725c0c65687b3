import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualkanba import _accel, kernels
from dualkanba.layers import kan_knots

from .oracles import de_boor_basis, naive_scan

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


def scan_inputs(rng, L=2, n=7, E=3, N=4):
    return (rng.normal(size=(L, n, E)), rng.uniform(0.01, 1.0, size=(L, n, E)),
            -rng.uniform(0.1, 3.0, size=(E, N)), rng.normal(size=(L, n, N)),
            rng.normal(size=(L, n, N)), rng.normal(size=E))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 9), st.integers(1, 4), st.integers(1, 5))
def test_numpy_scan_matches_naive_loop(seed, n, E, N):
    rng = np.random.default_rng(seed)
    u, delta, A, B, C, D = scan_inputs(rng, 1, n, E, N)
    y, _ = kernels.scan_forward_np(u, delta, A, B, C, D)
    np.testing.assert_allclose(y[0], naive_scan(u[0], delta[0], A, B[0], C[0], D), rtol=0, atol=1e-12)


@needs_numba
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_numba_scan_equals_numpy(seed):
    rng = np.random.default_rng(seed)
    args = scan_inputs(rng)
    y_np, hs_np = kernels.scan_forward_np(*args)
    y_nb, hs_nb = kernels.scan_forward_nb(*args)
    np.testing.assert_allclose(y_nb, y_np, rtol=0, atol=1e-12)
    gy = rng.normal(size=y_np.shape)
    for a, b in zip(kernels.scan_backward_np(gy, *args, hs_np), kernels.scan_backward_nb(gy, *args, hs_nb)):
        np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_bspline_matches_de_boor(degree):
    knots = kan_knots(5, degree, 2.0)
    xs = np.linspace(-3.5, 3.5, 57)
    basis, _ = kernels.bspline_basis_np(xs, knots, degree)
    for x, row in zip(xs, basis):
        np.testing.assert_allclose(row, de_boor_basis(x, knots, degree), rtol=0, atol=1e-13)


def test_bspline_derivative_by_differences():
    knots = kan_knots(5, 3, 2.0)
    xs = np.linspace(-1.9, 1.9, 23) + 0.013
    _, d = kernels.bspline_basis_np(xs, knots, 3)
    h = 1e-6
    num = (kernels.bspline_basis_np(xs + h, knots, 3)[0] - kernels.bspline_basis_np(xs - h, knots, 3)[0]) / (2 * h)
    np.testing.assert_allclose(d, num, rtol=0, atol=1e-8)


def test_bspline_partition_of_unity_inside_grid():
    knots = kan_knots(5, 3, 2.0)
    basis, _ = kernels.bspline_basis_np(np.linspace(-2, 1.999, 40), knots, 3)
    np.testing.assert_allclose(basis.sum(axis=1), 1.0, atol=1e-12)


@needs_numba
@pytest.mark.parametrize("degree", [1, 3])
def test_numba_bspline_equals_numpy(degree):
    knots = kan_knots(5, degree, 2.0)
    xs = np.random.default_rng(0).uniform(-4, 4, size=200)
    for a, b in zip(kernels.bspline_basis_np(xs, knots, degree), kernels.bspline_basis_nb(xs, knots, degree)):
        np.testing.assert_allclose(b, a, rtol=0, atol=1e-14)


def test_scatter_add_rows_matches_add_at():
    rng = np.random.default_rng(0)
    idx = rng.integers(0, 5, size=(3, 8))
    g = rng.normal(size=(3, 8, 2))
    want = np.zeros((3, 5, 2))
    for b in range(3):
        np.add.at(want[b], idx[b], g[b])
    np.testing.assert_allclose(kernels.scatter_add_rows_np(idx, g, 5), want, atol=1e-14)
    if _accel.HAVE_NUMBA:
        np.testing.assert_allclose(kernels.scatter_add_rows_nb(idx, g, 5), want, atol=1e-14)


def test_env_flag_selects_numpy_fallback():
    code = "from dualkanba import _accel; print(_accel.USE_NUMBA)"
    env = dict(os.environ, **{_accel.ENV_FLAG: "0"})
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
