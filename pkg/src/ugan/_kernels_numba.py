"""Numba-compiled kernels; importing this module requires numba.

Contracts match _kernels_numpy.py.  Loops are written against contiguous
1-D (or 2-D for lse_rows) float64 arrays; backend.py guarantees layout.
No fastmath: results must track the numpy twin to rounding error.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def leaky_relu_fwd(x, slope):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        out[i] = v if v > 0.0 else slope * v
    return out


@njit(cache=True)
def leaky_relu_bwd(x, g, slope):
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = g[i] if x[i] > 0.0 else slope * g[i]
    return out


@njit(cache=True)
def softplus_fwd(x):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        a = v if v > 0.0 else 0.0
        out[i] = a + np.log1p(np.exp(-abs(v)))
    return out


@njit(cache=True)
def _sigmoid_scalar(v):
    if v >= 0.0:
        return 1.0 / (1.0 + np.exp(-v))
    e = np.exp(v)
    return e / (1.0 + e)


@njit(cache=True)
def softplus_bwd(x, g):
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = g[i] * _sigmoid_scalar(x[i])
    return out


@njit(cache=True)
def sigmoid_fwd(x):
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = _sigmoid_scalar(x[i])
    return out


@njit(cache=True)
def sigmoid_bwd(y, g):
    out = np.empty_like(y)
    for i in range(y.size):
        out[i] = g[i] * y[i] * (1.0 - y[i])
    return out


@njit(cache=True)
def lse_rows(x):
    n, k = x.shape
    lse = np.empty(n)
    p = np.empty((n, k))
    for i in range(n):
        m = x[i, 0]
        for j in range(1, k):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(k):
            e = np.exp(x[i, j] - m)
            p[i, j] = e
            s += e
        lse[i] = m + np.log(s)
        inv = 1.0 / s
        for j in range(k):
            p[i, j] *= inv
    return lse, p


@njit(cache=True)
def adam_step(p, g, m, v, t, lr, beta1, beta2, eps):
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i in range(p.size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)
