"""Selective-prediction benchmark for Bayesian deep-learning uncertainty methods."""

from .bench import BenchmarkConfig, BenchmarkReport, run_benchmark
from .data import Dataset, GeneratorSpec, StandardNormalizer, generate_synthetic, load_csv
from .methods import (
    METHOD_TAGS,
    DeepEnsembleClassifier,
    DeterministicClassifier,
    EnsembleMCDropoutClassifier,
    MCDropoutClassifier,
    MFVIClassifier,
    RandomReferralClassifier,
    make_estimator,
)
from .metrics import (
    PredictiveSamples,
    ReferralCurve,
    RocCurve,
    UncertaintyScoredPredictions,
    aggregate_seeds,
    binary_accuracy,
    operating_point,
    oracle_referral_curve,
    predictive_entropy,
    predictive_mean,
    referral_sweep,
    roc_and_auc,
)
from .nn import NetworkSpec, ParameterSet

__version__ = "0.1.0"

__all__ = [
    "BenchmarkConfig", "BenchmarkReport", "run_benchmark",
    "Dataset", "GeneratorSpec", "StandardNormalizer", "generate_synthetic", "load_csv",
    "METHOD_TAGS", "DeepEnsembleClassifier", "DeterministicClassifier",
    "EnsembleMCDropoutClassifier", "MCDropoutClassifier", "MFVIClassifier",
    "RandomReferralClassifier", "make_estimator",
    "PredictiveSamples", "ReferralCurve", "RocCurve", "UncertaintyScoredPredictions",
    "aggregate_seeds", "binary_accuracy", "operating_point", "oracle_referral_curve",
    "predictive_entropy", "predictive_mean", "referral_sweep", "roc_and_auc",
    "NetworkSpec", "ParameterSet",
]
