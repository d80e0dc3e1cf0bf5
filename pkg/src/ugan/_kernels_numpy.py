"""Pure-numpy reference kernels.

Same contracts as the numba twins in _kernels_numba.py: elementwise kernels
take 1-D float64 arrays, lse_rows takes a 2-D batch of logit rows, adam_step
mutates its param/moment buffers in place.  Formulas are kept identical so
the two backends agree to rounding error.
"""

import numpy as np


def leaky_relu_fwd(x, slope):
    return np.where(x > 0.0, x, slope * x)


def leaky_relu_bwd(x, g, slope):
    return np.where(x > 0.0, g, slope * g)


def softplus_fwd(x):
    # max(x,0) + log1p(exp(-|x|)) is finite for any float64 input
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_bwd(x, g):
    return g * sigmoid_fwd(x)


def sigmoid_fwd(x):
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_bwd(y, g):
    # y is the forward output
    return g * y * (1.0 - y)


def lse_rows(x):
    """Row-wise log-sum-exp and softmax of a (B, K) logit matrix."""
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    s = np.sum(e, axis=1, keepdims=True)
    lse = (m + np.log(s))[:, 0]
    return lse, e / s


def adam_step(p, g, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam update, in place on p, m, v (1-D buffers)."""
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
