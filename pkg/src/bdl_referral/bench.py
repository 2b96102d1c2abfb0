"""Multi-seed benchmark: train every method, sample, score referral curves, aggregate."""

import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import GeneratorSpec, apply_normalization, fit_normalization, generate_synthetic, load_csv
from .methods import METHOD_TAGS, make_estimator
from .metrics import (
    DEFAULT_FRACTIONS,
    ReferralCurve,
    UncertaintyScoredPredictions,
    aggregate_seeds,
    mean_entropy_by_region,
    operating_point,
    oracle_referral_curve,
    referral_sweep,
    retained_indices,
    roc_and_auc,
)
from .exceptions import UndefinedAUCError

logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
CONFIG_FORMAT_VERSION = 1
EVAL_SPLITS = ("test", "shifted_test")
_TUPLE_FIELDS = ("methods", "hidden_layer_sizes", "fractions", "table_fractions", "roc_fractions")


@dataclass(frozen=True)
class BenchmarkConfig:
    methods: tuple = METHOD_TAGS
    n_seeds: int = 9
    n_samples: int = 100
    learning_rate: float = 4e-4
    batch_size: int = 64
    dropout_rate: float = 0.2
    l2_coefficient: float = 5e-5
    max_epochs: int = 100
    patience: int = 10
    hidden_layer_sizes: tuple = (32, 32)
    alpha: float = 0.2
    deep_ensemble_members: int = 5
    ensemble_mc_dropout_members: int = 3
    prior_sigma: float = 1.0
    mfvi_estimator: str = "flipout"
    kl_mode: str = "closed_form"
    fractions: tuple = DEFAULT_FRACTIONS
    table_fractions: tuple = (0.5, 0.7, 1.0)
    roc_fractions: tuple = (0.6, 0.9)
    data: dict = field(default_factory=lambda: {"generator": GeneratorSpec().to_dict(), "seed": 0})
    output_dir: str = "benchmark_out"
    base_seed: int = 0
    n_workers: int = 1
    format_version: int = CONFIG_FORMAT_VERSION

    def __post_init__(self):
        for name in _TUPLE_FIELDS:
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be at least 1")
        unknown = [m for m in self.methods if m not in METHOD_TAGS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {METHOD_TAGS}")
        if not self.methods:
            raise ValueError("at least one method is required")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if "generator" not in self.data and "csv" not in self.data:
            raise ValueError("data must name a 'generator' spec or 'csv' paths")
        missing = [f for f in (*self.table_fractions, *self.roc_fractions)
                   if not any(abs(f - g) < 1e-9 for g in self.fractions)]
        if missing:
            raise ValueError(f"table/ROC fractions {missing} are not on the fraction grid")
        if self.format_version != CONFIG_FORMAT_VERSION:
            raise ValueError(f"unsupported config format_version {self.format_version}")

    def to_dict(self):
        d = asdict(self)
        for name in _TUPLE_FIELDS:
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def cell_seed(self, method_index, seed_index):
        """Seeds never depend on which other methods are configured."""
        return self.base_seed + method_index * 1000 + seed_index

    def method_index(self, method):
        return METHOD_TAGS.index(method)

    def estimator_params(self, method, seed):
        params = dict(
            hidden_layer_sizes=self.hidden_layer_sizes, alpha=self.alpha,
            dropout_rate=self.dropout_rate, l2_coefficient=self.l2_coefficient,
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            max_epochs=self.max_epochs, patience=self.patience, n_samples=self.n_samples,
            prior_sigma=self.prior_sigma, estimator=self.mfvi_estimator, kl_mode=self.kl_mode,
            random_state=seed,
        )
        if method == "deep_ensemble":
            params["n_members"] = self.deep_ensemble_members
        elif method == "ensemble_mc_dropout":
            params["n_members"] = self.ensemble_mc_dropout_members
        return params


def load_datasets(config):
    """Normalised ``{split: Dataset}`` using training statistics only."""
    if "generator" in config.data:
        spec = GeneratorSpec.from_dict(config.data["generator"])
        splits = generate_synthetic(spec, config.data.get("seed", config.base_seed))
    else:
        paths = config.data["csv"]
        splits = {}
        for name in ("train", "val", "test", "shifted_test"):
            if paths.get(name):
                splits[name] = load_csv(paths[name], split=name)
        if "train" not in splits or "test" not in splits:
            raise ValueError("CSV data needs at least train and test files")
    stats = fit_normalization(splits["train"])
    return {k: apply_normalization(stats, v) for k, v in splits.items()}


def _roc_block(scored, fraction):
    keep = retained_indices(scored.uncertainty, fraction)
    try:
        roc = roc_and_auc(scored.mean[keep], scored.labels[keep])
    except UndefinedAUCError:
        return None
    op = operating_point(roc)
    return {
        "fpr": roc.fpr.tolist(),
        "tpr": roc.tpr.tolist(),
        "auc": roc.auc,
        "operating_point": {"sensitivity": op.sensitivity, "specificity": op.specificity,
                            "meets_target": op.meets_target, "reachable": op.reachable},
    }


def run_cell(config, datasets, method, seed_index):
    """Train and evaluate one (method, seed); never raises."""
    seed = config.cell_seed(config.method_index(method), seed_index)
    cell = {"method": method, "seed_index": seed_index, "seed": seed}
    start = time.perf_counter()
    try:
        train = datasets["train"]
        val = datasets.get("val")
        est = make_estimator(method, **config.estimator_params(method, seed))
        est.fit(train.X, train.y, None if val is None else val.X, None if val is None else val.y)
        splits = {}
        for split in EVAL_SPLITS:
            if split not in datasets:
                continue
            ds = datasets[split]
            scored = est.score_predictions(ds.X, ds.y)
            curve = referral_sweep(scored, config.fractions)
            oracle = oracle_referral_curve(scored.correctness(), config.fractions,
                                           scored.mean, scored.labels)
            splits[split] = {
                "curve": curve.to_dict(),
                "oracle": oracle.to_dict(),
                "roc": {repr(f): _roc_block(scored, f) for f in config.roc_fractions},
                "mean_uncertainty_by_region": mean_entropy_by_region(scored.uncertainty, ds.regions),
            }
        cell.update(status="ok", n_parameters=int(est.n_trainable_parameters()), splits=splits)
    except Exception as exc:  # fault isolation: record and move on
        logger.warning("cell %s/%d failed: %s", method, seed_index, exc)
        cell.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                    traceback=traceback.format_exc())
    cell["wall_clock_s"] = time.perf_counter() - start
    return cell


def _run_cell_job(args):
    return run_cell(*args)


@dataclass
class BenchmarkReport:
    config: dict
    results: dict
    cells: list
    format_version: int = REPORT_FORMAT_VERSION
    timings: dict = field(default_factory=dict)

    @property
    def failed(self):
        return [c for c in self.cells if c["status"] != "ok"]

    def to_dict(self):
        # wall-clock times are kept out so reruns serialise byte-identically
        return {"format_version": self.format_version, "config": self.config,
                "results": self.results, "cells": self.cells}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False)

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != REPORT_FORMAT_VERSION:
            raise ValueError(f"report format_version {d.get('format_version')!r} is not supported")
        return cls(d["config"], d["results"], d["cells"], d["format_version"])

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def curve(self, method, split, kind="curve"):
        return ReferralCurve.from_dict(self.results[method][split][kind])


def _aggregate(curves):
    if len(curves) == 1:
        return curves[0]
    return aggregate_seeds(curves)


def _assemble(config, cells):
    results = {}
    for method in config.methods:
        mcells = sorted((c for c in cells if c["method"] == method), key=lambda c: c["seed_index"])
        ok = [c for c in mcells if c["status"] == "ok"]
        results[method] = {}
        for split in EVAL_SPLITS:
            have = [c for c in ok if split in c["splits"]]
            if not have:
                results[method][split] = {
                    "status": "failed",
                    "errors": [c.get("error", "split unavailable") for c in mcells],
                }
                continue
            curves = [ReferralCurve.from_dict(c["splits"][split]["curve"]) for c in have]
            oracles = [ReferralCurve.from_dict(c["splits"][split]["oracle"]) for c in have]
            regions = sorted({r for c in have for r in c["splits"][split]["mean_uncertainty_by_region"]})
            results[method][split] = {
                "status": "ok",
                "seed_indices": [c["seed_index"] for c in have],
                "curve": _aggregate(curves).to_dict(),
                "oracle": _aggregate(oracles).to_dict(),
                "roc": [c["splits"][split]["roc"] for c in have],
                "mean_uncertainty_by_region": {
                    r: [c["splits"][split]["mean_uncertainty_by_region"].get(r) for c in have]
                    for r in regions
                },
                "n_parameters": have[0]["n_parameters"],
            }
    return results


def run_benchmark(config, n_workers=None):
    """Train/evaluate the (method, seed) grid and aggregate; deterministic in ``config``."""
    datasets = load_datasets(config)
    jobs = [(config, datasets, m, s) for m in config.methods for s in range(config.n_seeds)]
    workers = config.n_workers if n_workers is None else n_workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_run_cell_job, jobs))
    else:
        cells = [run_cell(*job) for job in jobs]

    timings = {f"{c['method']}/{c['seed_index']}": c.pop("wall_clock_s") for c in cells}
    for c in cells:
        c.pop("traceback", None)
    summary = [
        {k: c[k] for k in ("method", "seed_index", "seed", "status", "error", "n_parameters")
         if k in c}
        for c in cells
    ]
    return BenchmarkReport(config.to_dict(), _assemble(config, cells), summary, timings=timings)


def write_report_json(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json() + "\n")
    return path


def write_timings(report, path):
    path = Path(path)
    path.write_text(json.dumps(report.timings, indent=1, sort_keys=True) + "\n")
    return path


def referral_gain(report, method, split="test", low=0.5, high=1.0):
    c = report.curve(method, split)
    return c.value_at(low) - c.value_at(high)


def random_flatness(report, split="test", metric="accuracy", method="random"):
    """Max over the grid of |m(r) - m(1)| / sqrt(se(r)^2 + se(1)^2)."""
    c = report.curve(method, split)
    se_name = f"{metric}_stderr"
    vals = getattr(c, metric)
    ses = getattr(c, se_name)
    last = len(vals) - 1
    worst = 0.0
    for i in range(last):
        if vals[i] is None or vals[last] is None:
            continue
        se = np.hypot(ses[i] or 0.0, ses[last] or 0.0)
        diff = abs(vals[i] - vals[last])
        worst = max(worst, np.inf if se == 0 and diff > 0 else (0.0 if se == 0 else diff / se))
    return float(worst)


def frozen_config(**overrides):
    """The versioned synthetic benchmark shipped with the package (3 seeds, T=100)."""
    from importlib.resources import files

    d = json.loads(files("bdl_referral").joinpath("configs/frozen_benchmark_v1.json").read_text())
    d.update(overrides)
    return BenchmarkConfig.from_dict(d)
