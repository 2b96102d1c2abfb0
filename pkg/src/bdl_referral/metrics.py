"""Uncertainty scoring, referral sweeps, ROC analysis and cross-seed aggregation.

Referral keeps the ``ceil(r * N)`` least uncertain test points and scores
only those; ties in uncertainty are broken by original index.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import entr

from .exceptions import UndefinedAUCError

DEFAULT_FRACTIONS = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
NHS_SENSITIVITY = 0.85
NHS_SPECIFICITY = 0.80


@dataclass(frozen=True, eq=False)
class PredictiveSamples:
    """``T x N`` class-1 probabilities from stochastic forward passes."""

    probs: np.ndarray
    method_tag: str = None
    seed: object = None

    def __post_init__(self):
        p = np.array(self.probs, dtype=float, ndmin=2)
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError(f"predictive samples must be T x N with T >= 1, got {p.shape}")
        if not np.all(np.isfinite(p)) or np.any((p < 0) | (p > 1)):
            raise ValueError("predictive samples must be probabilities")
        # keep entries strictly inside (0, 1) even when a sigmoid saturates
        p = np.clip(p, np.finfo(float).tiny, np.nextafter(1.0, 0.0))
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_samples(self):
        return self.probs.shape[0]

    @property
    def n_points(self):
        return self.probs.shape[1]


def predictive_mean(samples):
    probs = samples.probs if isinstance(samples, PredictiveSamples) else np.asarray(samples, float)
    if probs.ndim != 2 or probs.shape[0] == 0 or probs.shape[1] == 0:
        raise ValueError("predictive_mean needs a non-empty T x N matrix")
    return probs.mean(axis=0)


def predictive_entropy(p):
    """Binary entropy in nats, with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise ValueError("predictive entropy needs probabilities in [0, 1]")
    h = entr(p) + entr(1.0 - p)
    return float(h) if h.ndim == 0 else h


def binary_accuracy(p_mean, labels, threshold=0.5):
    """Fraction with ``(p >= threshold) == label``."""
    p_mean = np.asarray(p_mean, dtype=float)
    labels = np.asarray(labels)
    if p_mean.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    if p_mean.shape != labels.shape:
        raise ValueError(f"shape mismatch {p_mean.shape} vs {labels.shape}")
    return float(np.mean((p_mean >= threshold).astype(int) == labels))


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    thresholds: np.ndarray = None

    def __post_init__(self):
        fpr = np.asarray(self.fpr, dtype=float)
        tpr = np.asarray(self.tpr, dtype=float)
        if fpr.shape != tpr.shape or fpr.ndim != 1 or fpr.size < 2:
            raise ValueError("ROC needs matching 1-D coordinate arrays with at least two points")
        if np.any(np.diff(fpr) < 0) or np.any(np.diff(tpr) < 0):
            raise ValueError("ROC coordinates must be non-decreasing")
        object.__setattr__(self, "fpr", fpr)
        object.__setattr__(self, "tpr", tpr)

    @classmethod
    def from_points(cls, fpr, tpr):
        fpr = np.asarray(fpr, dtype=float)
        tpr = np.asarray(tpr, dtype=float)
        area = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
        return cls(fpr, tpr, area)


def roc_and_auc(scores, labels):
    """Threshold sweep over unique score values (descending) with trapezoidal area.

    Equal scores form a single threshold step, so ties contribute a
    diagonal segment and the area equals the Mann-Whitney statistic with
    ties counted one half.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC is undefined when only one class is present")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    lab = labels[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.r_[0, np.cumsum(lab)[last_of_group]]
    fp = np.r_[0, np.cumsum(1 - lab)[last_of_group]]
    # integer trapezoid sums keep the area exact up to one final division
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    area = twice_area / (2.0 * n_pos * n_neg)
    return RocCurve(fp / n_neg, tp / n_pos, area, np.r_[np.inf, s[last_of_group]])


def mann_whitney_auc(scores, labels):
    """Brute-force pairwise statistic: P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    pos, neg = scores[labels], scores[~labels]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedAUCError("AUC is undefined when only one class is present")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


@dataclass(frozen=True)
class OperatingPoint:
    sensitivity: float
    specificity: float
    meets_target: bool
    reachable: bool = True


def operating_point(roc, min_sensitivity=NHS_SENSITIVITY, min_specificity=NHS_SPECIFICITY):
    """Smallest-FPR point with TPR >= ``min_sensitivity``; flags the specificity target."""
    ok = np.flatnonzero(roc.tpr >= min_sensitivity)
    if ok.size == 0:
        return OperatingPoint(float("nan"), float("nan"), False, reachable=False)
    i = ok[np.argmin(roc.fpr[ok])]
    sens = float(roc.tpr[i])
    spec = float(1.0 - roc.fpr[i])
    return OperatingPoint(sens, spec, spec >= min_specificity)


@dataclass(frozen=True, eq=False)
class UncertaintyScoredPredictions:
    mean: np.ndarray
    uncertainty: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        unc = np.asarray(self.uncertainty, dtype=float)
        labels = np.asarray(self.labels).astype(int)
        if not (mean.shape == unc.shape == labels.shape) or mean.ndim != 1:
            raise ValueError("mean, uncertainty and labels must be equal-length vectors")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "uncertainty", unc)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_samples(cls, samples, labels, uncertainty=None):
        """Predictive mean plus (by default) the predictive entropy of that mean."""
        mean = predictive_mean(samples)
        if uncertainty is None:
            uncertainty = predictive_entropy(mean)
        return cls(mean, uncertainty, labels)

    def correctness(self, threshold=0.5):
        return ((self.mean >= threshold).astype(int) == self.labels).astype(int)


@dataclass(frozen=True)
class ReferralCurve:
    """Metrics per retained-data fraction; AUC entries are None when undefined.

    Aggregated curves also carry standard errors and the raw per-seed values
    (``per_seed_*[seed][fraction]``).
    """

    fractions: tuple
    accuracy: tuple
    auc: tuple
    accuracy_stderr: tuple = None
    auc_stderr: tuple = None
    per_seed_accuracy: tuple = None
    per_seed_auc: tuple = None
    n_seeds: int = 1

    def value_at(self, fraction, metric="accuracy"):
        i = _fraction_index(self.fractions, fraction)
        return getattr(self, metric)[i]

    def to_dict(self):
        return {
            "fractions": list(self.fractions),
            "accuracy": list(self.accuracy),
            "auc": list(self.auc),
            "accuracy_stderr": _maybe_list(self.accuracy_stderr),
            "auc_stderr": _maybe_list(self.auc_stderr),
            "per_seed_accuracy": _maybe_nested(self.per_seed_accuracy),
            "per_seed_auc": _maybe_nested(self.per_seed_auc),
            "n_seeds": self.n_seeds,
        }

    @classmethod
    def from_dict(cls, d):
        def tup(v):
            return None if v is None else tuple(v)

        def nested(v):
            return None if v is None else tuple(tuple(r) for r in v)

        return cls(tuple(d["fractions"]), tuple(d["accuracy"]), tuple(d["auc"]),
                   tup(d.get("accuracy_stderr")), tup(d.get("auc_stderr")),
                   nested(d.get("per_seed_accuracy")), nested(d.get("per_seed_auc")),
                   d.get("n_seeds", 1))


def _maybe_list(v):
    return None if v is None else list(v)


def _maybe_nested(v):
    return None if v is None else [list(r) for r in v]


def _fraction_index(fractions, fraction):
    for i, f in enumerate(fractions):
        if math.isclose(f, fraction, rel_tol=0, abs_tol=1e-9):
            return i
    raise KeyError(f"fraction {fraction} not on the grid {list(fractions)}")


def retained_count(fraction, n):
    # round before ceil so that e.g. 0.7 * 10 = 7.000000000000001 keeps 7
    return int(math.ceil(round(fraction * n, 9)))


def _check_fractions(fractions):
    fractions = tuple(float(f) for f in fractions)
    if not fractions:
        raise ValueError("fraction grid is empty")
    if any(not 0.0 < f <= 1.0 for f in fractions):
        raise ValueError(f"fractions must lie in (0, 1], got {fractions}")
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise ValueError("fractions must be strictly increasing")
    return fractions


def _safe_auc(scores, labels):
    try:
        return roc_and_auc(scores, labels).auc
    except UndefinedAUCError:
        return None


def _sweep(order, correct, mean, labels, fractions):
    n = correct.size
    acc, auc = [], []
    for f in fractions:
        keep = np.sort(order[:retained_count(f, n)])
        acc.append(float(np.mean(correct[keep])))
        auc.append(None if mean is None else _safe_auc(mean[keep], labels[keep]))
    return ReferralCurve(fractions, tuple(acc), tuple(auc))


def retained_indices(uncertainty, fraction):
    """Original indices of the ``ceil(fraction * N)`` least-uncertain points, in index order."""
    order = np.argsort(np.asarray(uncertainty, dtype=float), kind="stable")
    return np.sort(order[:retained_count(fraction, order.size)])


def referral_sweep(predictions, fractions=DEFAULT_FRACTIONS, threshold=0.5):
    """Accuracy and AUC on the retained subset for each retained-data fraction."""
    fractions = _check_fractions(fractions)
    if predictions.labels.size == 0:
        raise ValueError("cannot sweep an empty prediction set")
    order = np.argsort(predictions.uncertainty, kind="stable")
    return _sweep(order, predictions.correctness(threshold), predictions.mean,
                  predictions.labels, fractions)


def oracle_referral_curve(correctness, fractions=DEFAULT_FRACTIONS, mean=None, labels=None):
    """Ceiling curve: refer wrong predictions first (uncertainty = 1 - correctness).

    AUC is only computed when the predictive ``mean`` and ``labels`` are given.
    """
    fractions = _check_fractions(fractions)
    correct = np.asarray(correctness).astype(int)
    if correct.size == 0:
        raise ValueError("cannot sweep an empty prediction set")
    order = np.argsort(1 - correct, kind="stable")
    if mean is not None:
        mean = np.asarray(mean, dtype=float)
        labels = np.asarray(labels).astype(int)
    return _sweep(order, correct, mean, labels, fractions)


def _mean_stderr(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=float)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, None
    return mean, float(arr.std(ddof=1) / math.sqrt(arr.size))


def aggregate_seeds(curves):
    """Per-fraction mean and standard error (sample std / sqrt(n_seeds)).

    Missing AUC values are skipped; a fraction with no defined AUC stays None.
    """
    curves = list(curves)
    if len(curves) < 2:
        raise ValueError("aggregation needs at least two per-seed curves")
    grid = curves[0].fractions
    for c in curves[1:]:
        if len(c.fractions) != len(grid) or any(
                not math.isclose(a, b, rel_tol=0, abs_tol=1e-12) for a, b in zip(c.fractions, grid)):
            raise ValueError("per-seed curves use different fraction grids")
    acc, acc_se, auc, auc_se = [], [], [], []
    for i in range(len(grid)):
        m, s = _mean_stderr([c.accuracy[i] for c in curves])
        acc.append(m)
        acc_se.append(s)
        m, s = _mean_stderr([c.auc[i] for c in curves])
        auc.append(m)
        auc_se.append(s)
    return ReferralCurve(
        tuple(grid), tuple(acc), tuple(auc), tuple(acc_se), tuple(auc_se),
        tuple(tuple(c.accuracy) for c in curves), tuple(tuple(c.auc) for c in curves),
        len(curves),
    )


def mean_entropy_by_region(uncertainty, regions):
    """Mean uncertainty per region tag (tags with no points are omitted)."""
    uncertainty = np.asarray(uncertainty, dtype=float)
    regions = np.asarray(regions, dtype=object)
    return {str(tag): float(uncertainty[regions == tag].mean())
            for tag in sorted(set(regions.tolist()))}
