"""Mean-field Gaussian weight posteriors: closed-form KL, Flipout and the minibatch ELBO.

Every weight and bias ``w`` gets a Gaussian ``N(mu, sigma^2)`` with
``sigma = softplus(rho)``; the prior is ``N(0, prior_sigma^2)``.
Gradients flow through the reparameterisation ``w = mu + sigma * eps``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import ShapeError
from .nn import (
    ParameterSet,
    _check_batch,
    class_frequencies,
    glorot_uniform_init,
    leaky_relu,
    loss_logit_gradient,
    sigmoid,
    weighted_cross_entropy,
)

ESTIMATORS = ("naive", "flipout")
KL_MODES = ("closed_form", "sampled")


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class VariationalParams:
    """Means and raw scales for every layer (weights ``(fan_out, fan_in)``, biases ``(fan_out,)``)."""

    mu: ParameterSet
    rho: ParameterSet
    prior_sigma: float = 1.0

    def __post_init__(self):
        if self.prior_sigma <= 0:
            raise ValueError("prior_sigma must be positive")
        for a, b in zip(self.mu.arrays(), self.rho.arrays()):
            if a.shape != b.shape:
                raise ShapeError(f"mu shape {a.shape} != rho shape {b.shape}")

    @property
    def sigma(self):
        return ParameterSet.from_arrays([softplus(r) for r in self.rho.arrays()])

    def arrays(self):
        """Optimiser layout: all mu arrays then all rho arrays."""
        return self.mu.arrays() + self.rho.arrays()

    @classmethod
    def from_arrays(cls, arrays, prior_sigma):
        half = len(arrays) // 2
        return cls(ParameterSet.from_arrays(arrays[:half]), ParameterSet.from_arrays(arrays[half:]),
                   prior_sigma)

    def n_trainable(self):
        return sum(a.size for a in self.arrays())


def init_variational(spec, rng, prior_sigma=1.0, init_sigma_factor=0.01):
    """Glorot means; sigma starts at ``init_sigma_factor`` times each layer's Glorot bound."""
    mu = glorot_uniform_init(spec, rng)
    rho = []
    for fan_out, fan_in in spec.shapes:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        r = float(softplus_inverse(init_sigma_factor * bound))
        rho.extend((np.full((fan_out, fan_in), r), np.full(fan_out, r)))
    return VariationalParams(mu, ParameterSet.from_arrays(rho), prior_sigma)


def kl_factorized_gaussian(mu, sigma, prior_sigma):
    """KL[N(mu, sigma^2) || N(0, prior_sigma^2)] summed over all entries."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    prior_sigma = np.asarray(prior_sigma, dtype=float)
    if np.any(sigma <= 0) or np.any(prior_sigma <= 0):
        raise ValueError("scales must be strictly positive")
    ratio = (sigma / prior_sigma) ** 2
    return float(0.5 * np.sum(ratio + (mu / prior_sigma) ** 2 - 1.0 - np.log(ratio)))


def _kl_closed_form_grads(mu, sigma, prior_sigma):
    s2 = prior_sigma ** 2
    return mu / s2, sigma / s2 - 1.0 / sigma


def _kl_sampled(mu, sigma, eps, prior_sigma):
    """log q(w) - log p(w) at w = mu + sigma*eps, with reparameterised grads."""
    w = mu + sigma * eps
    s2 = prior_sigma ** 2
    value = float(np.sum(-np.log(sigma) - 0.5 * eps ** 2 + np.log(prior_sigma) + 0.5 * w ** 2 / s2))
    return value, w / s2, -1.0 / sigma + w * eps / s2


def random_signs(rng, shape):
    return rng.integers(0, 2, size=shape) * 2.0 - 1.0


def flipout_perturb(inputs, delta_w, rng, delta_b=None, signs=None):
    """Per-example output perturbation ``((x_n * s_n) @ dW.T) * r_n`` (+ ``db * r_n``).

    ``dW`` is one noise sample shared by the batch; the random sign vectors
    make each example see an effectively independent perturbation
    ``dW * outer(r_n, s_n)`` with the same marginal distribution.
    """
    inputs = np.asarray(inputs, dtype=float)
    delta_w = np.asarray(delta_w, dtype=float)
    if inputs.ndim != 2 or delta_w.ndim != 2 or inputs.shape[1] != delta_w.shape[1]:
        raise ShapeError(f"inputs {inputs.shape} incompatible with weight noise {delta_w.shape}")
    n = inputs.shape[0]
    if signs is None:
        signs = (random_signs(rng, inputs.shape), random_signs(rng, (n, delta_w.shape[0])))
    s, r = signs
    out = (inputs * s) @ delta_w.T
    if delta_b is not None:
        out = out + delta_b
    return out * r


@dataclass
class ElboResult:
    loss: float
    nll: float
    kl: float
    grads: list


def _sample_noise(vparams, rng):
    return [rng.standard_normal(a.shape) for a in vparams.mu.arrays()]


def elbo_minibatch(vparams, spec, X, labels, n_total, rng, estimator="flipout",
                   kl_mode="closed_form", batch_class_freqs=None, n_classes=2):
    """Negative ELBO for one minibatch and its gradients w.r.t. (mu, rho).

    ``loss = n * weighted_CE + (n / n_total) * KL``; the first term is the
    class-reweighted batch negative log-likelihood under one weight sample
    (shared by the batch for ``naive``, sign-decorrelated per example for
    ``flipout``). Gradients are returned in ``vparams.arrays()`` order.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
    if kl_mode not in KL_MODES:
        raise ValueError(f"kl_mode must be one of {KL_MODES}, got {kl_mode!r}")
    X = _check_batch(spec, X)
    labels = np.asarray(labels)
    n = X.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if batch_class_freqs is None:
        batch_class_freqs = class_frequencies(labels, n_classes)

    mu = vparams.mu.arrays()
    rho = vparams.rho.arrays()
    sigma = [softplus(r) for r in rho]
    eps = _sample_noise(vparams, rng)
    delta = [s * e for s, e in zip(sigma, eps)]
    L = spec.n_layers

    # forward
    a = X
    cache = []
    for layer in range(L):
        mw, mb = mu[2 * layer], mu[2 * layer + 1]
        dw, db = delta[2 * layer], delta[2 * layer + 1]
        if estimator == "naive":
            z = a @ (mw + dw).T + (mb + db)
            signs = None
        else:
            signs = (random_signs(rng, a.shape), random_signs(rng, (n, mw.shape[0])))
            z = a @ mw.T + mb + flipout_perturb(a, dw, None, db, signs)
        cache.append((a, z, signs))
        if layer < L - 1:
            a = leaky_relu(z, spec.alpha)
    probs = sigmoid(cache[-1][1][:, 0])
    nll = n * weighted_cross_entropy(probs, labels, batch_class_freqs, n_classes)

    # backward
    g_mu = [None] * (2 * L)
    g_sigma = [None] * (2 * L)
    dz = n * loss_logit_gradient(probs, labels, batch_class_freqs, n_classes)[:, None]
    for layer in range(L - 1, -1, -1):
        a, z, signs = cache[layer]
        iw, ib = 2 * layer, 2 * layer + 1
        g_mu[iw] = dz.T @ a
        g_mu[ib] = dz.sum(axis=0)
        if estimator == "naive":
            g_sigma[iw] = g_mu[iw] * eps[iw]
            g_sigma[ib] = g_mu[ib] * eps[ib]
            da = dz @ (mu[iw] + delta[iw])
        else:
            s, r = signs
            dzr = dz * r
            g_sigma[iw] = (dzr.T @ (a * s)) * eps[iw]
            g_sigma[ib] = dzr.sum(axis=0) * eps[ib]
            da = dz @ mu[iw] + (dzr @ delta[iw]) * s
        if layer > 0:
            z_prev = cache[layer - 1][1]
            dz = np.where(z_prev >= 0, da, spec.alpha * da)

    scale = n / float(n_total)
    kl = 0.0
    for i in range(2 * L):
        if kl_mode == "closed_form":
            kl += kl_factorized_gaussian(mu[i], sigma[i], vparams.prior_sigma)
            gm, gs = _kl_closed_form_grads(mu[i], sigma[i], vparams.prior_sigma)
        else:
            value, gm, gs = _kl_sampled(mu[i], sigma[i], eps[i], vparams.prior_sigma)
            kl += value
        g_mu[i] = g_mu[i] + scale * gm
        g_sigma[i] = g_sigma[i] + scale * gs

    g_rho = [gs * expit(r) for gs, r in zip(g_sigma, rho)]
    return ElboResult(nll + scale * kl, nll, kl, g_mu + g_rho)


def sample_weights(vparams, rng):
    """One joint weight draw ``mu + sigma * eps`` as a ParameterSet."""
    arrays = [m + softplus(r) * rng.standard_normal(m.shape)
              for m, r in zip(vparams.mu.arrays(), vparams.rho.arrays())]
    return ParameterSet.from_arrays(arrays)


def sample_predictions(vparams, spec, X, n_samples, rng):
    """``n_samples`` forward passes, each with a fresh weight draw shared by the whole batch."""
    X = _check_batch(spec, X)
    rows = []
    for _ in range(n_samples):
        params = sample_weights(vparams, rng)
        a = X
        for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
            z = a @ w.T + b
            a = leaky_relu(z, spec.alpha) if layer < spec.n_layers - 1 else z
        rows.append(sigmoid(a[:, 0]))
    return np.asarray(rows)
