"""Minimal tape-based reverse-mode autodiff on float64 numpy arrays.

Define-by-run: ops executed inside a `with Tape():` block append (output,
pullback) records; `backward(loss)` walks the records in reverse and
accumulates gradients into every reachable tensor with requires_grad set.
Every primitive checks its output for NaN/Inf and raises NumericsError
naming the op, so a blown-up loss points at the first bad operation.

A tape can be backpropagated once; a second call is a ContractError, as is
calling backward on a tensor that was never recorded on a live tape.
"""

import numpy as np

from . import backend
from .errors import ContractError, DomainError, NumericsError

_TAPES = []


class Tensor:
    """A float64 array plus an accumulated gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "tape", "op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape = None
        self.op = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


class Tape:
    """Records one forward pass; context manager, no nesting, single use."""

    def __init__(self):
        self._records = []
        self._consumed = False

    def __enter__(self):
        if _TAPES:
            raise ContractError("a Tape is already active; nested tapes are not supported")
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPES.pop()
        return False


def as_tensor(x):
    """Wrap arrays/scalars as constant Tensors; pass Tensors through."""
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def backward(loss):
    """Backpropagate from a scalar loss through its recording tape."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.shape != ():
        raise DomainError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    tape = loss.tape
    if tape is None:
        raise ContractError("loss was not recorded on a live tape (constant, or tape already closed before the op ran)")
    if tape._consumed:
        raise ContractError("tape already backpropagated; build a new tape for another pass")
    tape._consumed = True
    loss.grad = np.ones((), dtype=np.float64)
    for out, pullback in reversed(tape._records):
        g = out.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"gradient flowing into op '{out.op}' is non-finite")
        pullback(g)
    tape._records.clear()


def _active_tape():
    return _TAPES[-1] if _TAPES else None


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        np.add(t.grad, g, out=t.grad)


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the input's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(name, data, inputs, pullback):
    if not np.all(np.isfinite(data)):
        raise NumericsError(f"op '{name}' produced non-finite values")
    out = Tensor(data)
    out.op = name
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape._records.append((out, pullback))
    return out


def _binary_data(name, a, b, fn):
    try:
        return fn(a.data, b.data)
    except ValueError as exc:
        raise DomainError(f"op '{name}': {exc}")


# ---------------------------------------------------------------------------
# arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = _binary_data("add", a, b, np.add)

    def pullback(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make("add", data, (a, b), pullback)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = _binary_data("sub", a, b, np.subtract)

    def pullback(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make("sub", data, (a, b), pullback)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = _binary_data("mul", a, b, np.multiply)

    def pullback(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make("mul", data, (a, b), pullback)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = _binary_data("div", a, b, np.divide)

    def pullback(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make("div", data, (a, b), pullback)


def neg(x):
    x = as_tensor(x)

    def pullback(g):
        _accum(x, -g)

    return _make("neg", -x.data, (x,), pullback)


def matmul(a, b, transpose_b=False):
    """a @ b, or a @ b.T when transpose_b (the dense-layer form)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DomainError(f"op 'matmul': expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    bt = b.data.T if transpose_b else b.data
    if a.data.shape[1] != bt.shape[0]:
        raise DomainError(f"op 'matmul': inner dimensions disagree, {a.data.shape} vs {b.data.shape}"
                          f"{' (transposed)' if transpose_b else ''}")
    data = a.data @ bt

    def pullback(g):
        if transpose_b:
            _accum(a, g @ b.data)
            _accum(b, g.T @ a.data)
        else:
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)

    return _make("matmul", data, (a, b), pullback)


# ---------------------------------------------------------------------------
# elementwise nonlinearities (backend kernels)

def exp(x):
    x = as_tensor(x)
    data = np.exp(x.data)

    def pullback(g):
        _accum(x, g * data)

    return _make("exp", data, (x,), pullback)


def log(x):
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x.data)

    def pullback(g):
        _accum(x, g / x.data)

    return _make("log", data, (x,), pullback)


def sqrt(x):
    x = as_tensor(x)
    with np.errstate(invalid="ignore"):
        data = np.sqrt(x.data)

    def pullback(g):
        _accum(x, g * (0.5 / data))

    return _make("sqrt", data, (x,), pullback)


def sigmoid(x):
    x = as_tensor(x)
    data = backend.sigmoid_fwd(x.data)

    def pullback(g):
        _accum(x, backend.sigmoid_bwd(data, g))

    return _make("sigmoid", data, (x,), pullback)


def softplus(x):
    x = as_tensor(x)
    data = backend.softplus_fwd(x.data)

    def pullback(g):
        _accum(x, backend.softplus_bwd(x.data, g))

    return _make("softplus", data, (x,), pullback)


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    data = backend.leaky_relu_fwd(x.data, slope)

    def pullback(g):
        _accum(x, backend.leaky_relu_bwd(x.data, g, slope))

    return _make("leaky_relu", data, (x,), pullback)


def lse(x):
    """Row-wise log-sum-exp of a (B, K) logit batch -> (B,)."""
    x = as_tensor(x)
    data, sm = backend.lse_rows(x.data)

    def pullback(g):
        _accum(x, sm * g[:, None])

    return _make("lse", data, (x,), pullback)


# ---------------------------------------------------------------------------
# reductions and shape ops

def mean(x, axis=None):
    x = as_tensor(x)
    data = np.mean(x.data, axis=axis)
    n = x.data.size if axis is None else x.data.shape[axis]

    def pullback(g):
        if axis is None:
            _accum(x, np.broadcast_to(g / n, x.data.shape))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis) / n, x.data.shape))

    return _make("mean", data, (x,), pullback)


def sum(x, axis=None):
    x = as_tensor(x)
    data = np.sum(x.data, axis=axis)

    def pullback(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.data.shape))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.data.shape))

    return _make("sum", data, (x,), pullback)


def sq_norm(x):
    """Sum of squares of all entries -> scalar."""
    x = as_tensor(x)
    data = np.sum(x.data * x.data)

    def pullback(g):
        _accum(x, 2.0 * g * x.data)

    return _make("sq_norm", data, (x,), pullback)


def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient passes only strictly inside the interval."""
    x = as_tensor(x)
    if not lo < hi:
        raise DomainError(f"op 'clamp': empty interval [{lo}, {hi}]")
    data = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def pullback(g):
        _accum(x, g * inside)

    return _make("clamp", data, (x,), pullback)


def concat(a, b, axis=1):
    a, b = as_tensor(a), as_tensor(b)
    data = _binary_data("concat", a, b, lambda x, y: np.concatenate((x, y), axis=axis))
    split = a.data.shape[axis]

    def pullback(g):
        ga, gb = np.split(g, [split], axis=axis)
        _accum(a, ga)
        _accum(b, gb)

    return _make("concat", data, (a, b), pullback)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise DomainError(f"op 'reshape': {exc}")

    def pullback(g):
        _accum(x, g.reshape(x.data.shape))

    return _make("reshape", data, (x,), pullback)
