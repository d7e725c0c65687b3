"""Hot numeric kernels.

Each kernel exists twice: a pure numpy version (``*_np``) and a loop version
compiled by numba (``*_nb``).  The public dispatchers pick one according to
:data:`dualkanba._accel.USE_NUMBA`; both are importable directly so tests and
benchmarks can compare them.

Array conventions:

* selective scan: ``u, delta`` are ``(L, n, E)``, ``B, C`` are ``(L, n, N)``,
  ``A`` is ``(E, N)`` and ``D`` is ``(E,)``.  ``L`` is the flattened batch.
* B-spline basis: ``x`` is 1-D, ``knots`` strictly increasing.
* scatter-add: ``idx`` is ``(L, s)`` row indices into an ``(L, n, c)`` target.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "scan_forward",
    "scan_backward",
    "bspline_basis",
    "scatter_add_rows",
]


# --------------------------------------------------------------------------
# selective scan
# --------------------------------------------------------------------------

def scan_forward_np(u, delta, A, B, C, D):
    L, n, E = u.shape
    N = A.shape[1]
    hs = np.empty((L, n, E, N), dtype=u.dtype)
    y = np.empty_like(u)
    h = np.zeros((L, E, N), dtype=u.dtype)
    for t in range(n):
        dA = np.exp(delta[:, t, :, None] * A)
        h = dA * h + (delta[:, t] * u[:, t])[:, :, None] * B[:, t, None, :]
        hs[:, t] = h
        y[:, t] = np.einsum("len,ln->le", h, C[:, t]) + D * u[:, t]
    return y, hs


def scan_backward_np(gy, u, delta, A, B, C, D, hs):
    L, n, E = u.shape
    gu = np.empty_like(u)
    gdelta = np.empty_like(delta)
    gB = np.empty_like(B)
    gC = np.empty_like(C)
    gA = np.zeros_like(A)
    gD = np.einsum("lte,lte->e", gy, u)
    carry = np.zeros((L, E, A.shape[1]), dtype=u.dtype)
    for t in range(n - 1, -1, -1):
        h = hs[:, t]
        h_prev = hs[:, t - 1] if t > 0 else np.zeros_like(h)
        dA = np.exp(delta[:, t, :, None] * A)
        gh = gy[:, t, :, None] * C[:, t, None, :] + carry
        gC[:, t] = np.einsum("le,len->ln", gy[:, t], h)
        dBu = delta[:, t] * u[:, t]
        gB[:, t] = np.einsum("len,le->ln", gh, dBu)
        ghB = np.einsum("len,ln->le", gh, B[:, t])
        gu[:, t] = gy[:, t] * D + ghB * delta[:, t]
        dec = gh * dA * h_prev
        gdelta[:, t] = np.einsum("len,en->le", dec, A) + ghB * u[:, t]
        gA += np.einsum("len,le->en", dec, delta[:, t])
        carry = gh * dA
    return gu, gdelta, gA, gB, gC, gD


@njit
def scan_forward_nb(u, delta, A, B, C, D):
    L, n, E = u.shape
    N = A.shape[1]
    hs = np.empty((L, n, E, N), dtype=u.dtype)
    y = np.empty_like(u)
    for b in range(L):
        for e in range(E):
            for t in range(n):
                dt = delta[b, t, e]
                du = dt * u[b, t, e]
                acc = 0.0
                for s in range(N):
                    prev = hs[b, t - 1, e, s] if t > 0 else 0.0
                    h = np.exp(dt * A[e, s]) * prev + du * B[b, t, s]
                    hs[b, t, e, s] = h
                    acc += C[b, t, s] * h
                y[b, t, e] = acc + D[e] * u[b, t, e]
    return y, hs


@njit
def scan_backward_nb(gy, u, delta, A, B, C, D, hs):
    L, n, E = u.shape
    N = A.shape[1]
    gu = np.empty_like(u)
    gdelta = np.empty_like(delta)
    gB = np.zeros_like(B)
    gC = np.zeros_like(C)
    gA = np.zeros_like(A)
    gD = np.zeros_like(D)
    carry = np.zeros(N, dtype=u.dtype)
    for b in range(L):
        for e in range(E):
            for s in range(N):
                carry[s] = 0.0
            for t in range(n - 1, -1, -1):
                g = gy[b, t, e]
                dt = delta[b, t, e]
                ut = u[b, t, e]
                gD[e] += g * ut
                ghB = 0.0
                gdt = 0.0
                for s in range(N):
                    h = hs[b, t, e, s]
                    prev = hs[b, t - 1, e, s] if t > 0 else 0.0
                    dA = np.exp(dt * A[e, s])
                    gh = g * C[b, t, s] + carry[s]
                    gC[b, t, s] += g * h
                    gB[b, t, s] += gh * dt * ut
                    ghB += gh * B[b, t, s]
                    dec = gh * dA * prev
                    gdt += dec * A[e, s]
                    gA[e, s] += dec * dt
                    carry[s] = gh * dA
                gu[b, t, e] = g * D[e] + ghB * dt
                gdelta[b, t, e] = gdt + ghB * ut
    return gu, gdelta, gA, gB, gC, gD


def scan_forward(u, delta, A, B, C, D):
    """Run ``h_t = exp(delta_t A) h_{t-1} + delta_t u_t B_t``, ``y_t = C_t h_t + D u_t``.

    Returns ``(y, hs)`` where ``hs`` holds every state for the backward pass.
    """
    if USE_NUMBA:
        return scan_forward_nb(u, delta, A, B, C, D)
    return scan_forward_np(u, delta, A, B, C, D)


def scan_backward(gy, u, delta, A, B, C, D, hs):
    """Vector-Jacobian product of :func:`scan_forward`.

    Returns gradients for ``(u, delta, A, B, C, D)``.
    """
    if USE_NUMBA:
        return scan_backward_nb(gy, u, delta, A, B, C, D, hs)
    return scan_backward_np(gy, u, delta, A, B, C, D, hs)


# --------------------------------------------------------------------------
# B-spline basis (Cox-de Boor) and its derivative
# --------------------------------------------------------------------------

def bspline_basis_np(x, knots, degree):
    t = knots
    # degree-0 indicators on half-open intervals
    b = ((x[:, None] >= t[None, :-1]) & (x[:, None] < t[None, 1:])).astype(x.dtype)
    prev = b
    for k in range(1, degree + 1):
        prev = b
        left = (x[:, None] - t[None, : -k - 1]) / (t[k:-1] - t[: -k - 1])
        right = (t[None, k + 1:] - x[:, None]) / (t[k + 1:] - t[1:-k])
        b = left * b[:, :-1] + right * b[:, 1:]
    if degree == 0:
        return b, np.zeros_like(b)
    k = degree
    dl = k / (t[k:-1] - t[: -k - 1])
    dr = k / (t[k + 1:] - t[1:-k])
    db = dl * prev[:, :-1] - dr * prev[:, 1:]
    return b, db


@njit
def bspline_basis_nb(x, knots, degree):
    M = x.shape[0]
    T = knots.shape[0]
    nb = T - degree - 1
    out = np.zeros((M, nb), dtype=x.dtype)
    dout = np.zeros((M, nb), dtype=x.dtype)
    work = np.zeros(T - 1, dtype=x.dtype)
    lower = np.zeros(T - 1, dtype=x.dtype)
    for i in range(M):
        xi = x[i]
        for j in range(T - 1):
            work[j] = 1.0 if (knots[j] <= xi and xi < knots[j + 1]) else 0.0
        for k in range(1, degree + 1):
            for j in range(T - k):
                lower[j] = work[j]
            for j in range(T - 1 - k):
                a = (xi - knots[j]) / (knots[j + k] - knots[j])
                c = (knots[j + k + 1] - xi) / (knots[j + k + 1] - knots[j + 1])
                work[j] = a * lower[j] + c * lower[j + 1]
        for j in range(nb):
            out[i, j] = work[j]
        if degree > 0:
            for j in range(nb):
                dl = degree / (knots[j + degree] - knots[j])
                dr = degree / (knots[j + degree + 1] - knots[j + 1])
                dout[i, j] = dl * lower[j] - dr * lower[j + 1]
    return out, dout


def bspline_basis(x, knots, degree):
    """Evaluate all B-spline basis functions of ``degree`` and their x-derivatives.

    Returns two ``(len(x), len(knots) - degree - 1)`` arrays.  Basis values are
    zero outside ``[knots[0], knots[-1])``.
    """
    if USE_NUMBA:
        return bspline_basis_nb(x, knots, degree)
    return bspline_basis_np(x, knots, degree)


# --------------------------------------------------------------------------
# scatter-add (backward of row gathers)
# --------------------------------------------------------------------------

def scatter_add_rows_np(idx, g, n):
    L, s = idx.shape
    out = np.zeros((L, n, g.shape[2]), dtype=g.dtype)
    flat = (idx + np.arange(L)[:, None] * n).reshape(-1)
    np.add.at(out.reshape(L * n, -1), flat, g.reshape(L * s, -1))
    return out


@njit
def scatter_add_rows_nb(idx, g, n):
    L, s = idx.shape
    c = g.shape[2]
    out = np.zeros((L, n, c), dtype=g.dtype)
    for b in range(L):
        for j in range(s):
            r = idx[b, j]
            for k in range(c):
                out[b, r, k] += g[b, j, k]
    return out


def scatter_add_rows(idx, g, n):
    """Accumulate ``g[l, j]`` into row ``idx[l, j]`` of a zero ``(L, n, c)`` array."""
    if USE_NUMBA:
        return scatter_add_rows_nb(idx, g, n)
    return scatter_add_rows_np(idx, g, n)
