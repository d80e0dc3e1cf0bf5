"""Kernel backend selection.

The UGAN_BACKEND environment variable is read once at import time:
  auto   (default) use the numba kernels if numba imports, else numpy
  numba  require the compiled kernels, fail loudly if unavailable
  numpy  force the pure-numpy reference kernels

BACKEND names the choice that won.  All wrappers normalize inputs to
contiguous float64 so both implementations see identical layouts.
"""

import os

import numpy as np

from . import _kernels_numpy as _numpy_impl
from .errors import DomainError

_CHOICES = ("auto", "numba", "numpy")
_requested = os.environ.get("UGAN_BACKEND", "auto").strip().lower()
if _requested not in _CHOICES:
    raise DomainError(
        f"UGAN_BACKEND={_requested!r} is not one of {', '.join(_CHOICES)}"
    )

if _requested == "numpy":
    _impl = _numpy_impl
    BACKEND = "numpy"
else:
    try:
        from . import _kernels_numba as _numba_impl
    except ImportError as exc:
        if _requested == "numba":
            raise DomainError(f"UGAN_BACKEND=numba but numba import failed: {exc}")
        _impl = _numpy_impl
        BACKEND = "numpy"
    else:
        _impl = _numba_impl
        BACKEND = "numba"


def _flat(x):
    a = np.ascontiguousarray(x, dtype=np.float64)
    return a, a.reshape(-1)


def leaky_relu_fwd(x, slope=0.2):
    a, f = _flat(x)
    return _impl.leaky_relu_fwd(f, float(slope)).reshape(a.shape)


def leaky_relu_bwd(x, g, slope=0.2):
    a, f = _flat(x)
    _, gf = _flat(g)
    return _impl.leaky_relu_bwd(f, gf, float(slope)).reshape(a.shape)


def softplus_fwd(x):
    a, f = _flat(x)
    return _impl.softplus_fwd(f).reshape(a.shape)


def softplus_bwd(x, g):
    a, f = _flat(x)
    _, gf = _flat(g)
    return _impl.softplus_bwd(f, gf).reshape(a.shape)


def sigmoid_fwd(x):
    a, f = _flat(x)
    return _impl.sigmoid_fwd(f).reshape(a.shape)


def sigmoid_bwd(y, g):
    a, f = _flat(y)
    _, gf = _flat(g)
    return _impl.sigmoid_bwd(f, gf).reshape(a.shape)


def lse_rows(x):
    """Return (lse, softmax) for a 2-D batch of logit rows."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] == 0:
        raise DomainError(f"lse_rows expects a non-empty 2-D batch, got shape {a.shape}")
    return _impl.lse_rows(a)


def adam_step(p, g, m, v, t, lr, beta1, beta2, eps):
    """Fused in-place Adam update on 1-D contiguous float64 buffers."""
    _impl.adam_step(p, g, m, v, t, lr, beta1, beta2, eps)
