"""Uncertainty-aware binary classifiers with a scikit-learn interface.

Every estimator exposes ``sample_proba(X, n_samples)`` returning a ``T x N``
:class:`~bdl_referral.metrics.PredictiveSamples` and ``uncertainty(X)``
returning the referral key (predictive entropy, except for the random
baseline). ``predict_proba`` is the Monte Carlo predictive mean.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import nn
from ._rng import as_generator, make_rng
from .data import Dataset
from .metrics import PredictiveSamples, UncertaintyScoredPredictions, predictive_entropy, predictive_mean
from .training import TrainConfig, check_binary_targets, fit
from .variational import VariationalParams, elbo_minibatch, init_variational, sample_predictions

METHOD_TAGS = ("deterministic", "mc_dropout", "mfvi", "deep_ensemble", "ensemble_mc_dropout", "random")


def _resolve_seed(random_state):
    if random_state is None:
        return int(np.random.default_rng().integers(2**31))
    if isinstance(random_state, np.random.Generator):
        return int(random_state.integers(2**31))
    return int(random_state)


class UncertaintyClassifierMixin(ClassifierMixin):
    """Shared prediction surface; subclasses implement ``_sample(X, n_samples, rng)``."""

    method_tag = None

    def _validate_X(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model was fitted with {self.n_features_in_}")
        return X

    def _sampling_rng(self, random_state):
        if random_state is None:
            return make_rng(self.seed_, "sampling")
        return as_generator(random_state)

    def sample_proba(self, X, n_samples=None, random_state=None):
        """``n_samples`` stochastic class-1 probability rows (defaults to ``self.n_samples``)."""
        X = self._validate_X(X)
        T = self.n_samples if n_samples is None else n_samples
        if T < 1:
            raise ValueError(f"n_samples must be at least 1, got {T}")
        rng = self._sampling_rng(random_state)
        return PredictiveSamples(self._sample(X, int(T), rng), self.method_tag, self.seed_)

    def predict_proba(self, X, samples=None):
        if samples is None:
            samples = self.sample_proba(X)
        p = predictive_mean(samples)
        return np.column_stack([1.0 - p, p])

    def predict(self, X, samples=None):
        p = self.predict_proba(X, samples)[:, 1]
        return self.classes_[(p >= 0.5).astype(int)]

    def uncertainty(self, X, samples=None, random_state=None):
        if samples is None:
            samples = self.sample_proba(X, random_state=random_state)
        return predictive_entropy(predictive_mean(samples))

    def score_predictions(self, X, y, n_samples=None, random_state=None):
        samples = self.sample_proba(X, n_samples, random_state)
        unc = self.uncertainty(X, samples=samples, random_state=random_state)
        return UncertaintyScoredPredictions(predictive_mean(samples), unc, y)


def _fit_inputs(X, y, X_val, y_val, validation_fraction, seed):
    X, y = check_X_y(X, y, dtype=np.float64)
    y = check_binary_targets(y)
    if X_val is None and validation_fraction:
        from .data import split_train_val

        tr, va = split_train_val(Dataset(X, y), validation_fraction, seed)
        return tr.X, tr.y, va.X, va.y
    if X_val is not None:
        X_val, y_val = check_X_y(X_val, y_val, dtype=np.float64)
    return X, y, X_val, y_val


class _NetworkClassifier(UncertaintyClassifierMixin, BaseEstimator):
    """Dense network trained with dropout + L2 on the class-reweighted loss."""

    def __init__(self, hidden_layer_sizes=(32, 32), alpha=0.2, dropout_rate=0.2,
                 l2_coefficient=5e-5, learning_rate=4e-4, batch_size=64, max_epochs=100,
                 patience=10, n_samples=100, validation_fraction=None, random_state=None):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.alpha = alpha
        self.dropout_rate = dropout_rate
        self.l2_coefficient = l2_coefficient
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.n_samples = n_samples
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(self.learning_rate, self.batch_size, self.max_epochs, self.patience)

    def fit(self, X, y, X_val=None, y_val=None):
        seed = _resolve_seed(self.random_state)
        X, y, X_val, y_val = _fit_inputs(X, y, X_val, y_val, self.validation_fraction, seed)
        spec = nn.NetworkSpec((X.shape[1], *self.hidden_layer_sizes, 1), self.alpha,
                              self.dropout_rate, self.l2_coefficient)
        params = nn.glorot_uniform_init(spec, make_rng(seed, "init"))
        dropout_rng = make_rng(seed, "dropout")

        def loss_and_grads(arrays, batch):
            p = nn.ParameterSet.from_arrays(arrays)
            loss, grads = nn.backward(spec, p, batch.X, batch.y, batch.class_freqs, "train",
                                      dropout_rng)
            return loss, grads.arrays()

        val_loss = None
        if X_val is not None:
            def val_loss(arrays):
                probs = nn.predict_proba(spec, nn.ParameterSet.from_arrays(arrays), X_val)
                return nn.weighted_cross_entropy(probs, y_val)

        result = fit(params.arrays(), loss_and_grads, X, y, self._train_config(),
                     make_rng(seed, "data"), val_loss)
        self.spec_ = spec
        self.params_ = nn.ParameterSet.from_arrays(result.arrays)
        self._set_fit_state(X, seed, result)
        return self

    def _set_fit_state(self, X, seed, result):
        self.seed_ = seed
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        self.train_loss_ = list(result.train_loss)
        self.val_loss_ = list(result.val_loss)
        self.n_epochs_ = result.n_epochs
        self.best_epoch_ = result.best_epoch

    @property
    def final_loss_(self):
        return self.train_loss_[-1] if self.train_loss_ else float("nan")

    def n_trainable_parameters(self):
        check_is_fitted(self)
        return self.spec_.n_parameters()

    def eval_proba(self, X):
        """Deterministic forward pass with dropout disabled (no test-time rescaling)."""
        return nn.predict_proba(self.spec_, self.params_, self._validate_X(X))


class DeterministicClassifier(_NetworkClassifier):
    """Point-estimate network; every sample row is the eval-mode sigmoid output."""

    method_tag = "deterministic"

    def _sample(self, X, T, rng):
        p = nn.predict_proba(self.spec_, self.params_, X)
        return np.repeat(p[None, :], T, axis=0)


class MCDropoutClassifier(_NetworkClassifier):
    """Same training as :class:`DeterministicClassifier`; samples keep dropout on at test time."""

    method_tag = "mc_dropout"

    def _sample(self, X, T, rng):
        return sample_mc_dropout_arrays(self.spec_, self.params_, X, T, rng)


def sample_mc_dropout_arrays(spec, params, X, T, rng):
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    return np.asarray([nn.forward(spec, params, X, "train", rng).probs for _ in range(T)])


class MFVIClassifier(UncertaintyClassifierMixin, BaseEstimator):
    """Mean-field Gaussian posterior over all weights and biases, trained on the negative ELBO.

    Hidden widths are multiplied by ``width_scale`` (default ``1/sqrt(2)``)
    so that the doubled (mean, scale) parameterisation stays close to the
    parameter budget of the point-estimate networks. No dropout or L2 is
    used; the prior plays that role.
    """

    method_tag = "mfvi"

    def __init__(self, hidden_layer_sizes=(32, 32), alpha=0.2, width_scale=1 / math.sqrt(2),
                 prior_sigma=1.0, estimator="flipout", kl_mode="closed_form",
                 init_sigma_factor=0.01, learning_rate=4e-4, batch_size=64, max_epochs=100,
                 patience=10, n_samples=100, validation_fraction=None, random_state=None):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.alpha = alpha
        self.width_scale = width_scale
        self.prior_sigma = prior_sigma
        self.estimator = estimator
        self.kl_mode = kl_mode
        self.init_sigma_factor = init_sigma_factor
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.n_samples = n_samples
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def reduced_hidden_sizes(self):
        return tuple(max(1, int(round(w * self.width_scale))) for w in self.hidden_layer_sizes)

    def fit(self, X, y, X_val=None, y_val=None):
        seed = _resolve_seed(self.random_state)
        X, y, X_val, y_val = _fit_inputs(X, y, X_val, y_val, self.validation_fraction, seed)
        spec = nn.NetworkSpec((X.shape[1], *self.reduced_hidden_sizes(), 1), self.alpha, 0.0, 0.0)
        vparams = init_variational(spec, make_rng(seed, "init"), self.prior_sigma,
                                   self.init_sigma_factor)
        noise_rng = make_rng(seed, "noise")
        n_total = X.shape[0]

        def loss_and_grads(arrays, batch):
            vp = VariationalParams.from_arrays(arrays, self.prior_sigma)
            res = elbo_minibatch(vp, spec, batch.X, batch.y, n_total, noise_rng, self.estimator,
                                 self.kl_mode, batch.class_freqs)
            # report per-example loss so epoch averages are comparable across methods
            return res.loss / batch.y.size, res.grads

        val_loss = None
        if X_val is not None:
            def val_loss(arrays):
                half = len(arrays) // 2
                probs = nn.predict_proba(spec, nn.ParameterSet.from_arrays(arrays[:half]), X_val)
                return nn.weighted_cross_entropy(probs, y_val)

        cfg = TrainConfig(self.learning_rate, self.batch_size, self.max_epochs, self.patience)
        result = fit(vparams.arrays(), loss_and_grads, X, y, cfg, make_rng(seed, "data"), val_loss)
        self.spec_ = spec
        self.vparams_ = VariationalParams.from_arrays(result.arrays, self.prior_sigma)
        _NetworkClassifier._set_fit_state(self, X, seed, result)
        return self

    final_loss_ = _NetworkClassifier.final_loss_

    def n_trainable_parameters(self):
        check_is_fitted(self)
        return self.vparams_.n_trainable()

    def _sample(self, X, T, rng):
        return sample_predictions(self.vparams_, self.spec_, X, T, rng)

    def eval_proba(self, X):
        """Forward pass at the posterior mean."""
        return nn.predict_proba(self.spec_, self.vparams_.mu, self._validate_X(X))


class _EnsembleBase(UncertaintyClassifierMixin, BaseEstimator):
    _member_class = None

    def __init__(self, n_members=5, hidden_layer_sizes=(32, 32), alpha=0.2, dropout_rate=0.2,
                 l2_coefficient=5e-5, learning_rate=4e-4, batch_size=64, max_epochs=100,
                 patience=10, n_samples=100, validation_fraction=None, random_state=None):
        self.n_members = n_members
        self.hidden_layer_sizes = hidden_layer_sizes
        self.alpha = alpha
        self.dropout_rate = dropout_rate
        self.l2_coefficient = l2_coefficient
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.n_samples = n_samples
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _min_members(self):
        return 2

    def member_params(self):
        params = self.get_params()
        params.pop("n_members")
        return params

    def fit(self, X, y, X_val=None, y_val=None):
        if self.n_members < self._min_members():
            raise ValueError(f"n_members must be at least {self._min_members()}, got {self.n_members}")
        seed = _resolve_seed(self.random_state)
        params = self.member_params()
        self.members_ = []
        for i in range(self.n_members):
            params["random_state"] = seed + i
            self.members_.append(self._member_class(**params).fit(X, y, X_val, y_val))
        self.seed_ = seed
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = self.members_[0].n_features_in_
        return self

    def n_trainable_parameters(self):
        check_is_fitted(self)
        return sum(m.n_trainable_parameters() for m in self.members_)


class DeepEnsembleClassifier(_EnsembleBase):
    """``n_members`` independently seeded networks; sample rows are the member outputs."""

    method_tag = "deep_ensemble"
    _member_class = DeterministicClassifier

    def _sample(self, X, T, rng):
        # the ensemble is its own sample set: one row per member regardless of T
        return np.asarray([nn.predict_proba(m.spec_, m.params_, X) for m in self.members_])


class EnsembleMCDropoutClassifier(_EnsembleBase):
    """Independently trained dropout networks, each sampled ``n_samples // n_members`` times."""

    method_tag = "ensemble_mc_dropout"
    _member_class = MCDropoutClassifier

    def __init__(self, n_members=3, hidden_layer_sizes=(32, 32), alpha=0.2, dropout_rate=0.2,
                 l2_coefficient=5e-5, learning_rate=4e-4, batch_size=64, max_epochs=100,
                 patience=10, n_samples=100, validation_fraction=None, random_state=None):
        super().__init__(n_members, hidden_layer_sizes, alpha, dropout_rate, l2_coefficient,
                         learning_rate, batch_size, max_epochs, patience, n_samples,
                         validation_fraction, random_state)

    def _min_members(self):
        return 1

    def samples_per_member(self, n_samples=None):
        T = self.n_samples if n_samples is None else n_samples
        return max(1, T // self.n_members)

    def sample_proba(self, X, n_samples=None, random_state=None):
        """``n_members * (n_samples // n_members)`` rows, member-major."""
        X = self._validate_X(X)
        S = self.samples_per_member(n_samples)
        rng = self._sampling_rng(random_state)
        rows = sample_ensemble_mc_dropout(self.members_, X, S, rng).probs
        return PredictiveSamples(rows, self.method_tag, self.seed_)


class RandomReferralClassifier(UncertaintyClassifierMixin, BaseEstimator):
    """Predictions of ``base_estimator``; referral key is i.i.d. uniform noise."""

    method_tag = "random"

    def __init__(self, base_estimator=None, n_samples=100, random_state=None):
        self.base_estimator = base_estimator
        self.n_samples = n_samples
        self.random_state = random_state

    def fit(self, X, y, X_val=None, y_val=None):
        seed = _resolve_seed(self.random_state)
        base = DeterministicClassifier() if self.base_estimator is None else self.base_estimator
        self.base_estimator_ = clone(base).set_params(random_state=seed)
        self.base_estimator_.fit(X, y, X_val, y_val)
        self.seed_ = seed
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = self.base_estimator_.n_features_in_
        return self

    def _sample(self, X, T, rng):
        return self.base_estimator_.sample_proba(X, T, rng).probs

    def uncertainty(self, X, samples=None, random_state=None):
        check_is_fitted(self)
        n = np.asarray(X).shape[0] if samples is None else samples.n_points
        rng = make_rng(self.seed_, "referral") if random_state is None else as_generator(random_state)
        return random_scores(n, rng)

    def n_trainable_parameters(self):
        return self.base_estimator_.n_trainable_parameters()


def random_scores(n, rng):
    """i.i.d. U[0, 1) referral keys, independent of any input."""
    return as_generator(rng).random(int(n))


def sample_mc_dropout(model, X, T, rng):
    """``T`` train-mode passes of a fitted dropout network with fresh masks each pass."""
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    X = model._validate_X(X)
    rows = sample_mc_dropout_arrays(model.spec_, model.params_, X, T, as_generator(rng))
    return PredictiveSamples(rows, "mc_dropout", getattr(model, "seed_", None))


def sample_ensemble_mc_dropout(models, X, S, rng):
    """``S`` dropout passes per member, all ``E * S`` rows kept (member-major)."""
    if S < 1:
        raise ValueError(f"S must be at least 1, got {S}")
    models = list(models)
    if not models:
        raise ValueError("need at least one member model")
    rng = as_generator(rng)
    X = np.asarray(X, dtype=float)
    rows = [sample_mc_dropout_arrays(m.spec_, m.params_, X, S, rng) for m in models]
    return PredictiveSamples(np.concatenate(rows), "ensemble_mc_dropout")


# ---------------------------------------------------------------------------
# functional entry points


def _spec_params(spec, cfg):
    cfg = cfg or TrainConfig()
    return dict(hidden_layer_sizes=tuple(spec.layer_sizes[1:-1]), alpha=spec.alpha,
                learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                max_epochs=cfg.max_epochs, patience=cfg.patience)


def _xy(dataset):
    return (dataset.X, dataset.y) if isinstance(dataset, Dataset) else dataset


def _val_xy(val):
    return (None, None) if val is None else _xy(val)


def train_deterministic(spec, dataset, train_cfg=None, seed=0, val=None):
    model = DeterministicClassifier(dropout_rate=spec.dropout_rate,
                                    l2_coefficient=spec.l2_coefficient,
                                    random_state=seed, **_spec_params(spec, train_cfg))
    return model.fit(*_xy(dataset), *_val_xy(val))


def train_mc_dropout(spec, dataset, train_cfg=None, seed=0, val=None):
    model = MCDropoutClassifier(dropout_rate=spec.dropout_rate, l2_coefficient=spec.l2_coefficient,
                                random_state=seed, **_spec_params(spec, train_cfg))
    return model.fit(*_xy(dataset), *_val_xy(val))


def train_mfvi(spec, dataset, train_cfg=None, prior_sigma=1.0, estimator="flipout", seed=0,
               val=None, **kwargs):
    model = MFVIClassifier(prior_sigma=prior_sigma, estimator=estimator, random_state=seed,
                           **_spec_params(spec, train_cfg), **kwargs)
    return model.fit(*_xy(dataset), *_val_xy(val))


def train_deep_ensemble(spec, dataset, train_cfg=None, M=5, base_seed=0, val=None):
    if M < 2:
        raise ValueError(f"a deep ensemble needs M >= 2 members, got {M}")
    model = DeepEnsembleClassifier(M, dropout_rate=spec.dropout_rate,
                                   l2_coefficient=spec.l2_coefficient, random_state=base_seed,
                                   **_spec_params(spec, train_cfg))
    return model.fit(*_xy(dataset), *_val_xy(val))


ESTIMATORS = {
    "deterministic": DeterministicClassifier,
    "mc_dropout": MCDropoutClassifier,
    "mfvi": MFVIClassifier,
    "deep_ensemble": DeepEnsembleClassifier,
    "ensemble_mc_dropout": EnsembleMCDropoutClassifier,
    "random": RandomReferralClassifier,
}


def make_estimator(method_tag, **params):
    """Build the estimator for ``method_tag``, ignoring parameters it does not take."""
    try:
        cls = ESTIMATORS[method_tag]
    except KeyError:
        raise ValueError(f"unknown method {method_tag!r}; choose from {METHOD_TAGS}") from None
    if cls is RandomReferralClassifier:
        base = make_estimator("deterministic", **params)
        return cls(base_estimator=base, n_samples=params.get("n_samples", 100),
                   random_state=params.get("random_state"))
    accepted = cls().get_params()
    return cls(**{k: v for k, v in params.items() if k in accepted})
