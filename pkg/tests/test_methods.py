import numpy as np
import pytest
from sklearn.base import clone

from bdl_referral import checkpoint, nn
from bdl_referral.exceptions import TrainingError
from bdl_referral.methods import (
    METHOD_TAGS,
    DeepEnsembleClassifier,
    DeterministicClassifier,
    EnsembleMCDropoutClassifier,
    MCDropoutClassifier,
    MFVIClassifier,
    RandomReferralClassifier,
    make_estimator,
    random_scores,
    sample_ensemble_mc_dropout,
    sample_mc_dropout,
    train_deep_ensemble,
    train_deterministic,
    train_mfvi,
)
from bdl_referral.metrics import PredictiveSamples, binary_accuracy, predictive_mean, referral_sweep
from bdl_referral.training import TrainConfig

from conftest import FAST


@pytest.fixture(scope="module")
def fitted(small_splits):
    tr, va = small_splits["train"], small_splits["val"]
    out = {}
    for tag in METHOD_TAGS:
        params = dict(FAST, random_state=5)
        if tag in ("deep_ensemble", "ensemble_mc_dropout"):
            params["n_members"] = 3
        out[tag] = make_estimator(tag, **params).fit(tr.X, tr.y, va.X, va.y)
    return out


def test_contract_uniformity(fitted, small_splits):
    X = small_splits["test"].X
    y = small_splits["test"].y
    for tag, est in fitted.items():
        s = est.sample_proba(X)
        assert isinstance(s, PredictiveSamples)
        assert s.method_tag == tag
        assert s.n_points == X.shape[0] and s.n_samples >= 1
        assert np.all((s.probs > 0) & (s.probs < 1))
        proba = est.predict_proba(X)
        assert proba.shape == (X.shape[0], 2)
        assert np.allclose(proba.sum(axis=1), 1)
        curve = referral_sweep(est.score_predictions(X, y))
        assert len(curve.accuracy) == 6


def test_deterministic_rows_identical(fitted, small_splits):
    s = fitted["deterministic"].sample_proba(small_splits["test"].X, 25)
    assert s.n_samples == 25
    assert np.all(s.probs == s.probs[0])


def test_deterministic_uses_eval_mode(fitted, small_splits):
    est = fitted["deterministic"]
    X = small_splits["test"].X
    # averaging T identical rows may move the last bit
    assert np.allclose(est.predict_proba(X)[:, 1], est.eval_proba(X), rtol=1e-14, atol=0)


def test_sklearn_api(fitted):
    est = MCDropoutClassifier(hidden_layer_sizes=(4,), random_state=3)
    assert est.get_params()["hidden_layer_sizes"] == (4,)
    c = clone(est)
    assert c.get_params() == est.get_params()
    est.set_params(dropout_rate=0.1)
    assert est.dropout_rate == 0.1
    assert list(fitted["mc_dropout"].classes_) == [0, 1]


def test_predict_and_score(fitted, small_splits):
    te = small_splits["test"]
    est = fitted["deterministic"]
    pred = est.predict(te.X)
    assert set(np.unique(pred)) <= {0, 1}
    assert est.score(te.X, te.y) == pytest.approx(binary_accuracy(est.predict_proba(te.X)[:, 1], te.y))


def test_feature_count_checked(fitted):
    with pytest.raises(ValueError):
        fitted["deterministic"].predict_proba(np.zeros((3, 5)))


def test_single_class_training_error():
    X = np.random.default_rng(0).normal(size=(20, 2))
    with pytest.raises(TrainingError):
        DeterministicClassifier(**FAST).fit(X, np.zeros(20, int))
    with pytest.raises(TrainingError):
        MFVIClassifier(**FAST).fit(X, np.ones(20, int))


def test_deterministic_separable_blobs(blobs):
    X, y = blobs
    spec = nn.NetworkSpec((2, 16, 16, 1))
    model = train_deterministic(spec, (X, y), TrainConfig(max_epochs=60), seed=0)
    assert binary_accuracy(model.predict_proba(X)[:, 1], y) >= 0.95


def test_mfvi_separable_blobs(blobs):
    X, y = blobs
    spec = nn.NetworkSpec((2, 16, 16, 1))
    model = train_mfvi(spec, (X, y), TrainConfig(max_epochs=60), seed=0)
    assert binary_accuracy(model.predict_proba(X)[:, 1], y) >= 0.9


def test_same_seed_same_checkpoint(small_splits):
    tr = small_splits["train"]
    for tag in ("deterministic", "mfvi"):
        a = make_estimator(tag, random_state=9, **FAST).fit(tr.X, tr.y)
        b = make_estimator(tag, random_state=9, **FAST).fit(tr.X, tr.y)
        assert checkpoint.dumps(a) == checkpoint.dumps(b)
        assert np.array_equal(a.sample_proba(tr.X).probs, b.sample_proba(tr.X).probs)


def test_mc_dropout_reproducible(fitted, small_splits):
    X = small_splits["test"].X
    est = fitted["mc_dropout"]
    a = sample_mc_dropout(est, X, 100, np.random.default_rng(1))
    b = sample_mc_dropout(est, X, 100, np.random.default_rng(1))
    assert a.n_samples == 100
    assert np.array_equal(a.probs, b.probs)
    assert not np.allclose(a.probs[0], a.probs[1])


def test_mc_dropout_without_dropout_is_deterministic(small_splits):
    tr = small_splits["train"]
    est = MCDropoutClassifier(dropout_rate=0.0, random_state=1, **FAST).fit(tr.X, tr.y)
    s = est.sample_proba(tr.X[:20], 10)
    assert np.all(s.probs == est.eval_proba(tr.X[:20]))


def test_mc_dropout_mean_converges(fitted, small_splits):
    est = fitted["mc_dropout"]
    x = small_splits["test"].X[:1]
    rng = np.random.default_rng(0)
    draws = sample_mc_dropout(est, x, 10_000, rng).probs[:, 0]
    sd = draws.std(ddof=1)
    ref = sample_mc_dropout(est, x, 10_000, np.random.default_rng(1)).probs[:, 0].mean()
    # 1/sqrt(T) shrinkage: errors of T=100 means vs T=10^4 mean are ~sd/10
    means_100 = draws.reshape(100, 100).mean(axis=1)
    assert means_100.std(ddof=1) == pytest.approx(sd / 10, rel=0.25)
    assert abs(draws.mean() - ref) < 4 * sd / np.sqrt(5000)


def test_sample_count_validation(fitted, small_splits):
    X = small_splits["test"].X[:5]
    with pytest.raises(ValueError):
        fitted["mc_dropout"].sample_proba(X, 0)
    with pytest.raises(ValueError):
        sample_mc_dropout(fitted["mc_dropout"], X, 0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_ensemble_mc_dropout(fitted["ensemble_mc_dropout"].members_, X, 0, 0)


def test_mfvi_parameter_doubling_and_width(fitted):
    est = fitted["mfvi"]
    assert est.spec_.layer_sizes == (2, 6, 1)  # round(8 / sqrt(2)) = 6
    assert est.n_trainable_parameters() == 2 * est.spec_.n_parameters()
    assert MFVIClassifier(hidden_layer_sizes=(32, 32)).reduced_hidden_sizes() == (23, 23)


def test_mfvi_samples_reproducible(fitted, small_splits):
    X = small_splits["test"].X
    a = fitted["mfvi"].sample_proba(X, 20, 4)
    b = fitted["mfvi"].sample_proba(X, 20, 4)
    assert np.array_equal(a.probs, b.probs)


def test_deep_ensemble_members_distinct(fitted):
    members = fitted["deep_ensemble"].members_
    dumps = [checkpoint.dumps(m) for m in members]
    assert len(set(dumps)) == len(dumps)
    assert [m.random_state for m in members] == [5, 6, 7]


def test_deep_ensemble_rows_are_members(fitted, small_splits):
    X = small_splits["test"].X
    est = fitted["deep_ensemble"]
    s = est.sample_proba(X)
    assert s.n_samples == 3
    for row, m in zip(s.probs, est.members_):
        assert np.array_equal(row, m.eval_proba(X))


def test_ensemble_mean_arithmetic():
    s = PredictiveSamples([[0.2], [0.4], [0.9]])
    assert predictive_mean(s)[0] == pytest.approx(0.5)


def test_ensemble_permutation_invariance(fitted, small_splits):
    X = small_splits["test"].X
    est = fitted["deep_ensemble"]
    p = est.predict_proba(X)[:, 1]
    est_rev = clone(est)
    est_rev.members_ = est.members_[::-1]
    est_rev.seed_, est_rev.classes_, est_rev.n_features_in_ = est.seed_, est.classes_, est.n_features_in_
    assert np.allclose(est_rev.predict_proba(X)[:, 1], p, rtol=0, atol=1e-15)


def test_deep_ensemble_needs_two_members(small_splits):
    tr = small_splits["train"]
    with pytest.raises(ValueError):
        DeepEnsembleClassifier(n_members=1, **FAST).fit(tr.X, tr.y)
    with pytest.raises(ValueError):
        train_deep_ensemble(nn.NetworkSpec((2, 4, 1)), (tr.X, tr.y), M=1)


def test_ensemble_mc_dropout_shapes(fitted, small_splits):
    X = small_splits["test"].X
    members = fitted["ensemble_mc_dropout"].members_
    s = sample_ensemble_mc_dropout(members, X, 33, np.random.default_rng(0))
    assert s.n_samples == 99
    again = sample_ensemble_mc_dropout(members, X, 33, np.random.default_rng(0))
    assert np.array_equal(s.probs, again.probs)
    est = EnsembleMCDropoutClassifier(n_members=3, n_samples=100)
    assert est.samples_per_member() == 33


def test_ensemble_mc_dropout_single_member_reduces(fitted, small_splits):
    X = small_splits["test"].X
    member = fitted["ensemble_mc_dropout"].members_[0]
    a = sample_ensemble_mc_dropout([member], X, 40, np.random.default_rng(3))
    b = sample_mc_dropout(member, X, 40, np.random.default_rng(3))
    assert np.array_equal(a.probs, b.probs)


def test_random_scores_fixed_seed():
    a = random_scores(50, np.random.default_rng(3))
    b = random_scores(50, np.random.default_rng(3))
    assert np.array_equal(a, b)
    assert np.all((a >= 0) & (a < 1))


def test_random_baseline_ignores_inputs(fitted, small_splits):
    est = fitted["random"]
    X = small_splits["test"].X
    perm = np.random.default_rng(0).permutation(X.shape[0])
    assert np.array_equal(est.uncertainty(X), est.uncertainty(X[perm]))
    # predictions are the wrapped base model's
    assert np.array_equal(est.predict_proba(X), est.base_estimator_.predict_proba(X))


def test_random_expected_accuracy_is_flat(fitted, small_splits):
    te = small_splits["test"]
    est = fitted["random"]
    samples = est.sample_proba(te.X)
    mean = predictive_mean(samples)
    full = binary_accuracy(mean, te.y)
    from bdl_referral.metrics import UncertaintyScoredPredictions

    accs = []
    for trial in range(50):
        scores = random_scores(te.y.size, np.random.default_rng(1000 + trial))
        accs.append(referral_sweep(UncertaintyScoredPredictions(mean, scores, te.y), [0.5, 1.0]).accuracy[0])
    accs = np.asarray(accs)
    assert abs(accs.mean() - full) < 3 * accs.std(ddof=1) / np.sqrt(50)


def test_make_estimator_unknown():
    with pytest.raises(ValueError):
        make_estimator("hmc")
    assert isinstance(make_estimator("random"), RandomReferralClassifier)
