"""Neural layers built on the autodiff primitives.

Every layer exposes forward(x, mode, rng) plus named parameter/state
iterators used by the optimizer and the checkpoint writer.  mode is
"train" or "eval"; stochastic layers (noise, dropout) are identity in
eval mode and draw from the rng handed to forward in train mode, so a
fixed rng makes the whole network a deterministic function.
"""

import numpy as np

from . import autodiff as ad
from .errors import DomainError

TRAIN = "train"
EVAL = "eval"


def check_mode(mode):
    if mode not in (TRAIN, EVAL):
        raise DomainError(f"mode must be '{TRAIN}' or '{EVAL}', got {mode!r}")
    return mode


def glorot_uniform(shape, rng):
    """Glorot/Xavier-uniform init for a (fan_out, fan_in) weight."""
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    """Affine map x @ W.T + b with Glorot-uniform W and zero bias."""

    def __init__(self, in_dim, out_dim, rng):
        self.weight = ad.Tensor(glorot_uniform((out_dim, in_dim), rng), requires_grad=True)
        self.bias = ad.Tensor(np.zeros(out_dim), requires_grad=True)

    def forward(self, x, mode=TRAIN, rng=None):
        return ad.add(ad.matmul(x, self.weight, transpose_b=True), self.bias)

    def params(self, prefix):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias

    def state(self, prefix):
        return iter(())


class BatchNorm:
    """Per-feature batch normalization with running statistics.

    Train mode normalizes by the biased batch mean/variance (batch size
    must be >= 2) and folds them into the running stats with
    running = momentum*running + (1-momentum)*batch.  Eval mode
    normalizes by the running stats.
    """

    def __init__(self, dim, momentum=0.9, eps=1e-5):
        self.gamma = ad.Tensor(np.ones(dim), requires_grad=True)
        self.beta = ad.Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = float(momentum)
        self.eps = float(eps)

    def forward(self, x, mode=TRAIN, rng=None):
        check_mode(mode)
        if mode == TRAIN:
            if x.data.shape[0] < 2:
                raise DomainError(
                    f"batch norm needs batch size >= 2 in train mode, got {x.data.shape[0]}"
                )
            mu = ad.mean(x, axis=0)
            xc = ad.sub(x, mu)
            var = ad.mean(ad.mul(xc, xc), axis=0)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1.0 - m) * mu.data
            self.running_var = m * self.running_var + (1.0 - m) * var.data
            xhat = ad.div(xc, ad.sqrt(ad.add(var, self.eps)))
        else:
            xc = ad.sub(x, ad.Tensor(self.running_mean))
            xhat = ad.div(xc, ad.Tensor(np.sqrt(self.running_var + self.eps)))
        return ad.add(ad.mul(xhat, self.gamma), self.beta)

    def params(self, prefix):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def state(self, prefix):
        yield f"{prefix}.running_mean", self.running_mean
        yield f"{prefix}.running_var", self.running_var

    def load_state(self, name, value):
        if name.endswith("running_mean"):
            self.running_mean = value
        else:
            self.running_var = value


class WeightNormDense:
    """Dense layer with weight normalization: row i of W is g_i * v_i / |v_i|.

    Gradients flow through both v and g; g starts at 1 and the bias at 0,
    v is Glorot-uniform.
    """

    def __init__(self, in_dim, out_dim, rng):
        self.v = ad.Tensor(glorot_uniform((out_dim, in_dim), rng), requires_grad=True)
        self.g = ad.Tensor(np.ones(out_dim), requires_grad=True)
        self.bias = ad.Tensor(np.zeros(out_dim), requires_grad=True)
        self._out_dim = out_dim

    def effective_weight(self):
        sq = ad.sum(ad.mul(self.v, self.v), axis=1)
        scale = ad.div(self.g, ad.sqrt(sq))
        return ad.mul(self.v, ad.reshape(scale, (self._out_dim, 1)))

    def forward(self, x, mode=TRAIN, rng=None):
        return ad.add(ad.matmul(x, self.effective_weight(), transpose_b=True), self.bias)

    def params(self, prefix):
        yield f"{prefix}.v", self.v
        yield f"{prefix}.g", self.g
        yield f"{prefix}.bias", self.bias

    def state(self, prefix):
        return iter(())


class GaussianNoise:
    """Adds N(0, sigma^2) noise in train mode; identity in eval mode."""

    def __init__(self, sigma):
        self.sigma = float(sigma)

    def forward(self, x, mode=TRAIN, rng=None):
        check_mode(mode)
        if mode == EVAL or self.sigma == 0.0:
            return x
        if rng is None:
            raise DomainError("train-mode GaussianNoise needs an rng")
        return ad.add(x, ad.Tensor(rng.normal(scale=self.sigma, size=x.data.shape)))

    def params(self, prefix):
        return iter(())

    def state(self, prefix):
        return iter(())


class Dropout:
    """Inverted dropout: train scales kept units by 1/(1-rate), eval is identity."""

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise DomainError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)

    def forward(self, x, mode=TRAIN, rng=None):
        check_mode(mode)
        if mode == EVAL or self.rate == 0.0:
            return x
        if rng is None:
            raise DomainError("train-mode Dropout needs an rng")
        keep = (rng.random(size=x.data.shape) >= self.rate) / (1.0 - self.rate)
        return ad.mul(x, ad.Tensor(keep))

    def params(self, prefix):
        return iter(())

    def state(self, prefix):
        return iter(())
