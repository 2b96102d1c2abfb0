import math

import numpy as np
import pytest
from scipy import stats

from bdl_referral import nn
from bdl_referral.exceptions import ShapeError
from bdl_referral.variational import (
    VariationalParams,
    elbo_minibatch,
    flipout_perturb,
    init_variational,
    kl_factorized_gaussian,
    sample_predictions,
    softplus,
    softplus_inverse,
)

from conftest import central_differences, max_relative_error


def test_kl_examples():
    assert kl_factorized_gaussian(0.0, 1.0, 1.0) == 0.0
    assert kl_factorized_gaussian(1.0, 1.0, 1.0) == pytest.approx(0.5, abs=1e-15)
    expected = 0.5 * (0.25 - 1 - math.log(0.25))
    assert kl_factorized_gaussian(0.0, 0.5, 1.0) == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.3181, abs=1e-4)


def test_kl_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        kl_factorized_gaussian([0.0], [0.0], 1.0)
    with pytest.raises(ValueError):
        kl_factorized_gaussian([0.0], [1.0], -1.0)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(0)
    mu, sigma, sp = 0.7, 0.3, 1.5
    w = rng.normal(mu, sigma, 200_000)
    mc = np.mean(stats.norm.logpdf(w, mu, sigma) - stats.norm.logpdf(w, 0, sp))
    assert kl_factorized_gaussian(mu, sigma, sp) == pytest.approx(mc, rel=1e-2)


def test_softplus_inverse_roundtrip():
    y = np.array([1e-4, 0.01, 0.5, 3.0, 30.0])
    assert np.allclose(softplus(softplus_inverse(y)), y, rtol=1e-12)


def _vp(spec, seed, sigma_factor=0.3, prior=1.0):
    return init_variational(spec, np.random.default_rng(seed), prior, sigma_factor)


def test_parameter_doubling():
    spec = nn.NetworkSpec((5, 7, 3, 1))
    vp = _vp(spec, 0)
    assert vp.n_trainable() == 2 * spec.n_parameters()
    assert all(np.all(s > 0) for s in vp.sigma.arrays())


@pytest.mark.parametrize("estimator", ["naive", "flipout"])
@pytest.mark.parametrize("kl_mode", ["closed_form", "sampled"])
def test_elbo_gradients_match_finite_differences(estimator, kl_mode):
    rng = np.random.default_rng(1)
    spec = nn.NetworkSpec((3, 6, 4, 1), dropout_rate=0.0, l2_coefficient=0.0)
    vp = _vp(spec, 2)
    X = rng.normal(size=(10, 3))
    y = np.r_[np.ones(3, int), np.zeros(7, int)]
    arrays = vp.arrays()
    shapes = [a.shape for a in arrays]
    flat = np.concatenate([a.ravel() for a in arrays])

    def unflatten(v):
        out, pos = [], 0
        for s in shapes:
            n = int(np.prod(s))
            out.append(v[pos:pos + n].reshape(s))
            pos += n
        return out

    def f(v):
        p = VariationalParams.from_arrays(unflatten(v), vp.prior_sigma)
        return elbo_minibatch(p, spec, X, y, 500, np.random.default_rng(42), estimator, kl_mode).loss

    res = elbo_minibatch(vp, spec, X, y, 500, np.random.default_rng(42), estimator, kl_mode)
    analytic = np.concatenate([g.ravel() for g in res.grads])
    fd = central_differences(f, flat)
    assert max_relative_error(analytic, fd) < 1e-4


def test_kl_accounting_identity():
    spec = nn.NetworkSpec((2, 5, 1))
    vp = _vp(spec, 3)
    X = np.random.default_rng(0).normal(size=(8, 2))
    y = np.array([0, 1, 0, 0, 1, 0, 0, 0])
    res = elbo_minibatch(vp, spec, X, y, 400, np.random.default_rng(1))
    kl = sum(kl_factorized_gaussian(m, s, 1.0) for m, s in zip(vp.mu.arrays(), vp.sigma.arrays()))
    assert res.kl == kl
    assert res.loss == res.nll + (8 / 400) * kl


def test_degenerate_posterior_recovers_deterministic_loss():
    spec = nn.NetworkSpec((2, 5, 1), dropout_rate=0.0, l2_coefficient=0.0)
    mu = nn.glorot_uniform_init(spec, np.random.default_rng(0))
    rho = nn.ParameterSet.from_arrays([np.full(a.shape, -60.0) for a in mu.arrays()])
    vp = VariationalParams(mu, rho, 1.0)
    X = np.random.default_rng(1).normal(size=(9, 2))
    y = np.array([0, 1, 0, 0, 1, 0, 0, 1, 0])
    det = nn.weighted_cross_entropy(nn.predict_proba(spec, mu, X), y)
    for est in ("naive", "flipout"):
        res = elbo_minibatch(vp, spec, X, y, 100, np.random.default_rng(2), est)
        assert res.nll == pytest.approx(9 * det, rel=1e-10)


def test_naive_and_flipout_agree_in_expectation():
    spec = nn.NetworkSpec((2, 6, 1))
    vp = _vp(spec, 4, sigma_factor=1.0)
    X = np.random.default_rng(5).normal(size=(16, 2))
    y = np.r_[np.ones(4, int), np.zeros(12, int)]
    draws = {}
    for est in ("naive", "flipout"):
        rng = np.random.default_rng(10 if est == "naive" else 11)
        draws[est] = np.array([elbo_minibatch(vp, spec, X, y, 100, rng, est).nll for _ in range(10_000)])
    diff = draws["naive"].mean() - draws["flipout"].mean()
    se = math.sqrt(draws["naive"].var(ddof=1) / 10_000 + draws["flipout"].var(ddof=1) / 10_000)
    assert abs(diff) < 3 * se


def test_flipout_zero_noise():
    X = np.random.default_rng(0).normal(size=(5, 3))
    out = flipout_perturb(X, np.zeros((4, 3)), np.random.default_rng(1))
    assert out.shape == (5, 4)
    assert np.all(out == 0)


def test_flipout_shape_error():
    with pytest.raises(ShapeError):
        flipout_perturb(np.zeros((5, 3)), np.zeros((4, 2)), np.random.default_rng(0))


def test_flipout_equals_sign_flipped_weights():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(4, 3))
    dW = rng.normal(size=(2, 3))
    s = rng.choice([-1.0, 1.0], size=(4, 3))
    r = rng.choice([-1.0, 1.0], size=(4, 2))
    out = flipout_perturb(X, dW, None, signs=(s, r))
    for n in range(4):
        assert np.allclose(out[n], X[n] @ (dW * np.outer(r[n], s[n])).T)


def test_flipout_batch_of_one_matches_naive_distribution():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 4))
    sigma = np.abs(rng.normal(size=(3, 4))) + 0.1
    naive = np.array([(x @ (sigma * rng.standard_normal(sigma.shape)).T)[0, 0] for _ in range(10_000)])
    flip = np.array([flipout_perturb(x, sigma * rng.standard_normal(sigma.shape), rng)[0, 0]
                     for _ in range(10_000)])
    assert stats.ks_2samp(naive, flip).pvalue > 0.01


def test_sample_predictions_reproducible_and_shared_per_pass():
    spec = nn.NetworkSpec((2, 4, 1))
    vp = _vp(spec, 0)
    X = np.random.default_rng(1).normal(size=(6, 2))
    a = sample_predictions(vp, spec, X, 7, np.random.default_rng(3))
    b = sample_predictions(vp, spec, X, 7, np.random.default_rng(3))
    assert a.shape == (7, 6)
    assert np.array_equal(a, b)
    assert not np.allclose(a[0], a[1])
