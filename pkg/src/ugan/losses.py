"""The four-player objectives in numerically stable K-logit form.

The classifier keeps K real-class logits; the fake class carries an
implicit logit of 0, so with z = logsumexp(logits):

    p(fake | x)              = sigmoid(-z)
    -log p(y | x, real)      = z - logit_y          (labeled / generated CE)
    -log p(real | x)         = softplus(z) - z      (unlabeled term)
    -log p(fake | x)         = softplus(z)          (bad-generator term)

All four classifier terms are nonnegative cross-entropies.  The
discriminator sees probabilities already clamped into (0, 1) by the
model, so its logs stay finite.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DomainError


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the classifier terms: C + l0*C_gen + l1*C_unl + l2*C_bad."""

    lambda0: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0


def fake_probability(logits):
    """p(fake | x) for a (B, K) logit batch, as a Tensor of shape (B,)."""
    return ad.sigmoid(ad.neg(ad.lse(logits)))


def loss_c_supervised(logits, y_onehot):
    """Mean cross-entropy over the K real classes: E[lse(l) - l_y].

    Used both for labeled pairs (term 1) and good-generator pairs with
    their conditioning labels as targets (term 2).
    """
    y = ad.as_tensor(y_onehot)
    if y.data.shape != logits.data.shape:
        raise DomainError(
            f"one-hot targets shape {y.data.shape} does not match logits {logits.data.shape}"
        )
    picked = ad.sum(ad.mul(logits, y), axis=1)
    return ad.mean(ad.sub(ad.lse(logits), picked))


def loss_c_unlabeled(logits):
    """Mean -log p(real | x): E[softplus(lse(l)) - lse(l)]."""
    z = ad.lse(logits)
    return ad.mean(ad.sub(ad.softplus(z), z))


def loss_c_generated(logits):
    """Mean -log p(fake | x): E[softplus(lse(l))]."""
    return ad.mean(ad.softplus(ad.lse(logits)))


def classifier_total(c1, c2, c3, c4, weights, lambda0_eff=None):
    """Weighted classifier objective; lambda0_eff overrides weights.lambda0
    (the generated-pair term is gated off early in training)."""
    l0 = weights.lambda0 if lambda0_eff is None else float(lambda0_eff)
    total = ad.add(c1, ad.mul(c2, l0))
    total = ad.add(total, ad.mul(c3, weights.lambda1))
    return ad.add(total, ad.mul(c4, weights.lambda2))


def loss_discriminator(d_real, d_fake_gg, d_fake_c):
    """-E log d(real) - 0.5 E log(1 - d(gG)) - 0.5 E log(1 - d(C))."""
    t_real = ad.mean(ad.log(d_real))
    t_gg = ad.mean(ad.log(ad.sub(1.0, d_fake_gg)))
    t_c = ad.mean(ad.log(ad.sub(1.0, d_fake_c)))
    return ad.neg(ad.add(t_real, ad.add(ad.mul(t_gg, 0.5), ad.mul(t_c, 0.5))))


def loss_good_generator(d_on_pairs):
    """Non-saturating generator objective: -E log d(gG sample, label)."""
    return ad.neg(ad.mean(ad.log(d_on_pairs)))


def pull_away(features, eps=1e-12):
    """Mean squared pairwise cosine similarity over distinct rows.

    Diversity proxy standing in for the (intractable) negative sample
    entropy: identical rows score 1, mutually orthogonal rows score 0.
    eps keeps the row norms away from zero.
    """
    n = features.data.shape[0]
    if n < 2:
        raise DomainError(f"pull-away needs at least 2 samples, got {n}")
    gram = ad.matmul(features, features, transpose_b=True)
    sq = ad.sum(ad.mul(features, features), axis=1)
    norms = ad.sqrt(ad.add(sq, eps))
    outer = ad.mul(ad.reshape(norms, (n, 1)), ad.reshape(norms, (1, n)))
    cos = ad.div(gram, outer)
    off_diag = ad.Tensor(1.0 - np.eye(n))
    total = ad.sum(ad.mul(ad.mul(cos, cos), off_diag))
    return ad.div(total, float(n * (n - 1)))


def loss_bad_generator(features_bg, mean_features_unlabeled, pull_weight=0.1):
    """Feature matching to the unlabeled mean plus weighted pull-away.

    mean_features_unlabeled is treated as a constant (no gradient into
    the classifier from bG's step).
    """
    target = ad.as_tensor(mean_features_unlabeled)
    fm = ad.sq_norm(ad.sub(ad.mean(features_bg, axis=0), target))
    return ad.add(fm, ad.mul(pull_away(features_bg), float(pull_weight)))
