"""Independent straight-line reimplementations used as test oracles.

Nothing here imports the package's forward code: each function is written
from the mathematical definition with plain loops or numpy.
"""

import math

import numpy as np


def de_boor_basis(x, knots, degree):
    """All B-spline basis values at scalar ``x`` by the Cox-de Boor recursion, written recursively."""
    knots = list(knots)

    def N(i, k):
        if k == 0:
            return 1.0 if knots[i] <= x < knots[i + 1] else 0.0
        left = right = 0.0
        if knots[i + k] != knots[i]:
            left = (x - knots[i]) / (knots[i + k] - knots[i]) * N(i, k - 1)
        if knots[i + k + 1] != knots[i + 1]:
            right = (knots[i + k + 1] - x) / (knots[i + k + 1] - knots[i + 1]) * N(i + 1, k - 1)
        return left + right

    return np.array([N(i, degree) for i in range(len(knots) - degree - 1)])


def naive_scan(u, delta, A, B, C, D):
    """Per-step, per-channel, per-state loop of the zero-order-hold recurrence (single sequence)."""
    n, E = u.shape
    N = A.shape[1]
    h = [[0.0] * N for _ in range(E)]
    y = np.zeros((n, E))
    for t in range(n):
        for e in range(E):
            acc = 0.0
            for s in range(N):
                h[e][s] = math.exp(delta[t, e] * A[e, s]) * h[e][s] + delta[t, e] * B[t, s] * u[t, e]
                acc += C[t, s] * h[e][s]
            y[t, e] = acc + D[e] * u[t, e]
    return y


def softmax(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def dense_kernel_attention(H, Wq, Wk, Wv, heads, temperature):
    """Per-head loops of ``sum_i exp(q.k_i/T) v_i / sum_j exp(q.k_j/T)`` over every token."""
    n, d = H.shape
    dh = d // heads
    Q, K, V = H @ Wq, H @ Wk, H @ Wv
    out = np.zeros((n, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for t in range(n):
            logits = np.array([Q[t, sl] @ K[i, sl] / temperature for i in range(n)])
            w = softmax(logits)
            out[t, sl] = sum(w[i] * V[i, sl] for i in range(n))
    return out


def mhca(Qs, KVs, Wq, Wk, Wv, Wo, heads):
    n_q, d = Qs.shape
    dh = d // heads
    Q, K, V = Qs @ Wq, KVs @ Wk, KVs @ Wv
    cat = np.zeros((n_q, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        w = softmax(Q[:, sl] @ K[:, sl].T / math.sqrt(dh))
        cat[:, sl] = w @ V[:, sl]
    return cat @ Wo


def ati(H_S, H_A, Wq, Wk, Wv, Wo, fc_w, fc_b, heads):
    m = mhca(H_S, H_A, Wq, Wk, Wv, Wo, heads)
    return m @ fc_w + fc_b + m


def silu(x):
    return x / (1.0 + np.exp(-x))


def dyt(x, alpha, gamma, beta):
    return gamma * np.tanh(alpha * x) + beta


def adam_scalar(theta, g, lr, b1=0.9, b2=0.999, eps=1e-8, steps=1):
    """Hand-written bias-corrected Adam on one scalar with a constant gradient."""
    m = v = 0.0
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta
