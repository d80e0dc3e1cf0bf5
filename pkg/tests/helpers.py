"""Shared test utilities: central finite differences and gradient comparison.

The FD oracle perturbs parameter entries in place (restoring them) and uses
central differences (f(x+h) - f(x-h)) / 2h with h = 1e-5 in float64.
Relative error uses |a-n| / max(floor, |a|, |n|) with floor 1e-6 so that
near-zero gradients compare absolutely instead of dividing by noise.
"""

import numpy as np

FD_H = 1e-5
REL_TOL = 1e-4


def fd_gradient(f, a, h=FD_H, indices=None):
    """Finite-difference df/da at the given flat indices (all by default).

    f is a zero-argument callable returning a python float; a is mutated in
    place during probing and restored afterwards.  Returns a 1-D array of
    derivatives aligned with `indices`.
    """
    flat = a.reshape(-1)
    if indices is None:
        indices = np.arange(flat.size)
    out = np.empty(len(indices))
    for k, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[k] = (fp - fm) / (2.0 * h)
    return out


def max_rel_err(analytic, numeric, floor=1e-6):
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(floor, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_param_grads(make_loss, params, rng=None, n_samples=None, h=FD_H):
    """Compare analytic grads of make_loss() against FD for each param tensor.

    make_loss builds a fresh tape, returns the scalar loss Tensor, and leaves
    grads populated by the caller-side backward; here we call it once for
    analytic grads and then probe FD coordinates.  Returns the max relative
    error across all probed coordinates.
    """
    from ugan import autodiff as ad

    with ad.Tape():
        loss = make_loss()
    ad.backward(loss)
    analytic = [None if p.grad is None else p.grad.copy() for p in params]
    ad.zero_grads(params)

    def value():
        out = make_loss()
        ad.zero_grads(params)
        return out.item()

    worst = 0.0
    for p, g in zip(params, analytic):
        assert g is not None, "parameter received no gradient"
        flat = p.data.reshape(-1)
        if n_samples is not None and flat.size > n_samples:
            assert rng is not None
            idx = rng.choice(flat.size, size=n_samples, replace=False)
        else:
            idx = np.arange(flat.size)
        numeric = fd_gradient(value, p.data, h=h, indices=idx)
        worst = max(worst, max_rel_err(g.reshape(-1)[idx], numeric))
    return worst
