"""Datasets, the synthetic shifted-benchmark generator, splits, normalisation and CSV I/O."""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import as_generator, make_rng
from .exceptions import CSVParseError, NormalizationStateError, StratificationError

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "shifted_test")
REGIONS = ("clean", "noise_region", "ood_region")
GENERATOR_VERSION = "1"


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    split: str = "train"
    regions: np.ndarray = None
    seed: int = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.asarray(self.y)
        if X.ndim != 2:
            raise ValueError(f"features must be a 2-D array, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match {X.shape[0]} rows")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite values")
        if not np.all(np.isin(y, (0, 1))):
            raise ValueError("labels must be binary (0/1)")
        y = y.astype(np.int64)
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}; expected one of {SPLITS}")
        regions = self.regions
        if regions is None:
            regions = np.full(X.shape[0], "clean", dtype=object)
        regions = np.asarray(regions, dtype=object)
        if regions.shape != y.shape:
            raise ValueError("region tags must have one entry per row")
        if not set(regions).issubset(REGIONS):
            raise ValueError(f"unknown region tag in {sorted(set(regions))}")
        for a in (X, y, regions):
            a.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "regions", regions)

    def __len__(self):
        return self.y.size

    @property
    def n_features(self):
        return self.X.shape[1]

    def positive_fraction(self):
        return float(self.y.mean()) if len(self) else float("nan")

    def subset(self, index, split=None):
        index = np.asarray(index)
        return Dataset(self.X[index], self.y[index], split or self.split, self.regions[index],
                       self.seed, dict(self.meta))

    def with_features(self, X):
        return Dataset(X, self.y, self.split, self.regions, self.seed, dict(self.meta))


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of the synthetic two-class benchmark.

    Each class is an equal-weight mixture of Gaussians mirrored across the
    hyperplane ``x0 = 0``. Points with ``|x0| < noise_halfwidth`` form the
    noise region, where labels flip with probability ``flip_rate``. The
    shifted split applies ``x -> shift_scale * x + shift_offset`` and adds an
    ``ood_fraction`` cluster around ``x1 = ood_displacement``, a region
    excluded from the other splits.
    """

    version: str = GENERATOR_VERSION
    n_features: int = 2
    n_train: int = 3000
    n_test: int = 2000
    n_shifted: int = 2000
    val_fraction: float = 0.2
    positive_fraction: float = 0.196
    flip_rate: float = 0.15
    noise_halfwidth: float = 0.5
    component_offsets: tuple = ((1.75, -1.0), (1.25, 1.0))
    component_std: float = 1.0
    shift_offset: float = 0.4
    shift_scale: float = 1.2
    ood_fraction: float = 0.2
    ood_displacement: float = 6.5
    ood_std: float = 0.6
    ood_exclusion_radius: float = 2.5

    def __post_init__(self):
        object.__setattr__(self, "component_offsets",
                           tuple(tuple(float(v) for v in c) for c in self.component_offsets))
        if self.version != GENERATOR_VERSION:
            raise ValueError(f"unsupported generator version {self.version!r}")
        if self.n_features < 2:
            raise ValueError("n_features must be at least 2")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ValueError("positive_fraction must lie in (0, 1)")
        if not 0.0 <= self.flip_rate < 0.5:
            raise ValueError("flip_rate must lie in [0, 0.5)")
        if not 0.0 <= self.ood_fraction < 1.0:
            raise ValueError("ood_fraction must lie in [0, 1)")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.noise_halfwidth < 0 or self.component_std <= 0 or self.shift_scale <= 0:
            raise ValueError("widths and scales must be positive")
        if min(self.n_train, self.n_test, self.n_shifted) < 2:
            raise ValueError("every split needs at least two points")
        if self._latent_positive_fraction() <= 0 or self._latent_positive_fraction() >= 1:
            raise ValueError("flip_rate too large for the requested positive_fraction")

    def to_dict(self):
        d = asdict(self)
        d["component_offsets"] = [list(c) for c in self.component_offsets]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        version = str(d.get("version", ""))
        if version != GENERATOR_VERSION:
            raise ValueError(f"generator spec version {version!r} is not supported "
                             f"(expected {GENERATOR_VERSION!r})")
        return cls(**d)

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def noise_region_probability(self):
        """P(|x0| < halfwidth) under either class (identical by mirror symmetry)."""
        w, s = self.noise_halfwidth, self.component_std
        return float(np.mean([norm.cdf((w - c[0]) / s) - norm.cdf((-w - c[0]) / s)
                              for c in self.component_offsets]))

    def _latent_positive_fraction(self):
        # flips move mass f*q from each class to the other; solve for the
        # pre-flip fraction that yields positive_fraction after flipping
        fq = self.flip_rate * self.noise_region_probability()
        return (self.positive_fraction - fq) / (1.0 - 2.0 * fq)

    def ood_center(self):
        c = np.zeros(self.n_features)
        c[1] = self.ood_displacement
        return c


def _component_means(spec, label):
    means = []
    sign = 1.0 if label == 1 else -1.0
    for offset in spec.component_offsets:
        m = np.zeros(spec.n_features)
        m[0] = sign * offset[0]
        m[1] = offset[1]
        means.append(m)
    return np.asarray(means)


def _draw_in_distribution(spec, n, rng):
    """Mixture draws with label noise, rejecting points inside the OOD exclusion ball."""
    pi = spec._latent_positive_fraction()
    center = spec.ood_center()
    X_parts, y_parts, r_parts = [], [], []
    needed = n
    while needed > 0:
        m = needed + 16
        latent = (rng.random(m) < pi).astype(np.int64)
        comp = rng.integers(0, len(spec.component_offsets), size=m)
        noise = rng.standard_normal((m, spec.n_features)) * spec.component_std
        flips = rng.random(m)
        X = np.empty((m, spec.n_features))
        for label in (0, 1):
            means = _component_means(spec, label)
            sel = latent == label
            X[sel] = means[comp[sel]] + noise[sel]
        keep = np.linalg.norm(X - center, axis=1) > spec.ood_exclusion_radius
        X, latent, flips = X[keep], latent[keep], flips[keep]
        in_noise = np.abs(X[:, 0]) < spec.noise_halfwidth
        y = np.where(in_noise & (flips < spec.flip_rate), 1 - latent, latent)
        regions = np.where(in_noise, "noise_region", "clean").astype(object)
        take = min(needed, X.shape[0])
        X_parts.append(X[:take])
        y_parts.append(y[:take])
        r_parts.append(regions[:take])
        needed -= take
    return np.concatenate(X_parts), np.concatenate(y_parts), np.concatenate(r_parts)


def _draw_shifted(spec, n, rng):
    n_ood = int(round(spec.ood_fraction * n))
    X, y, regions = _draw_in_distribution(spec, n - n_ood, rng)
    X = spec.shift_scale * X + spec.shift_offset
    if n_ood:
        Xo = spec.ood_center() + spec.ood_std * rng.standard_normal((n_ood, spec.n_features))
        # ground truth continues the x0 = 0 class boundary
        yo = (Xo[:, 0] > 0).astype(np.int64)
        X = np.concatenate([X, Xo])
        y = np.concatenate([y, yo])
        regions = np.concatenate([regions, np.full(n_ood, "ood_region", dtype=object)])
        order = rng.permutation(n)
        X, y, regions = X[order], y[order], regions[order]
    return X, y, regions


def generate_synthetic(spec=None, seed=0):
    """Return ``{"train", "val", "test", "shifted_test"}`` Datasets, a pure function of (spec, seed)."""
    spec = spec or GeneratorSpec()
    meta = {"generator": spec.to_dict()}
    X, y, r = _draw_in_distribution(spec, spec.n_train, make_rng(seed, "generator"))
    full = Dataset(X, y, "train", r, seed, meta)
    train, val = split_train_val(full, spec.val_fraction, seed)

    test_rng = np.random.default_rng([int(seed), 101])
    X, y, r = _draw_in_distribution(spec, spec.n_test, test_rng)
    test = Dataset(X, y, "test", r, seed, meta)

    shift_rng = np.random.default_rng([int(seed), 102])
    X, y, r = _draw_shifted(spec, spec.n_shifted, shift_rng)
    shifted = Dataset(X, y, "shifted_test", r, seed, meta)
    return {"train": train, "val": val, "test": test, "shifted_test": shifted}


def split_train_val(dataset, val_fraction=0.2, seed=0):
    """Stratified, disjoint, exhaustive split; class counts allocated by largest remainder."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    rng = make_rng(seed, "split")
    n = len(dataset)
    n_val = int(round(val_fraction * n))
    classes, counts = np.unique(dataset.y, return_counts=True)
    exact = counts * n_val / n
    alloc = np.floor(exact).astype(int)
    for i in np.argsort(-(exact - alloc), kind="stable")[: n_val - alloc.sum()]:
        alloc[i] += 1
    train_idx, val_idx = [], []
    for cls, count, k in zip(classes, counts, alloc):
        if k == 0 or k == count:
            raise StratificationError(
                f"class {cls} ({count} samples) would be absent from one side of the split")
        idx = rng.permutation(np.flatnonzero(dataset.y == cls))
        val_idx.append(idx[:k])
        train_idx.append(idx[k:])
    train_idx = np.sort(np.concatenate(train_idx))
    val_idx = np.sort(np.concatenate(val_idx))
    return dataset.subset(train_idx, "train"), dataset.subset(val_idx, "val")


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    constant_features: tuple = ()


def fit_normalization(train):
    X = train.X if isinstance(train, Dataset) else np.asarray(train, dtype=float)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = tuple(int(i) for i in np.flatnonzero(std == 0))
    if constant:
        logger.warning("features %s have zero variance; left unscaled", constant)
        std = np.where(std == 0, 1.0, std)
    return NormalizationStats(mean, std, constant)


def apply_normalization(stats, dataset):
    if stats is None or getattr(stats, "mean", None) is None:
        raise NormalizationStateError("normalization statistics have not been fitted")
    if isinstance(dataset, Dataset):
        return dataset.with_features((dataset.X - stats.mean) / stats.std)
    return (np.asarray(dataset, dtype=float) - stats.mean) / stats.std


class StandardNormalizer(TransformerMixin, BaseEstimator):
    """Per-feature standardisation fitted on training data only."""

    def fit(self, X, y=None):
        self.stats_ = fit_normalization(np.asarray(X, dtype=float))
        self.n_features_in_ = self.stats_.mean.size
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return apply_normalization(self.stats_, X)


@dataclass(frozen=True)
class CSVSchema:
    label_column: str = "label"
    feature_columns: tuple = None
    split_column: str = "split"
    region_column: str = "region"


def load_csv(path, schema=None, split=None):
    """Parse a header-first CSV into a Dataset; row numbers in errors are 1-based data rows."""
    schema = schema or CSVSchema()
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if schema.label_column not in header:
            raise CSVParseError(f"{path}: missing label column {schema.label_column!r}")
        meta_cols = {schema.label_column, schema.split_column, schema.region_column}
        features = list(schema.feature_columns or [h for h in header if h not in meta_cols])
        missing = [c for c in features if c not in header]
        if missing:
            raise CSVParseError(f"{path}: missing feature columns {missing}")
        fidx = [header.index(c) for c in features]
        lidx = header.index(schema.label_column)
        sidx = header.index(schema.split_column) if schema.split_column in header else None
        ridx = header.index(schema.region_column) if schema.region_column in header else None

        X, y, splits, regions = [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise CSVParseError(f"expected {len(header)} fields, got {len(row)}", row_no, line)
            try:
                feats = [float(row[i]) for i in fidx]
            except ValueError:
                raise CSVParseError(f"non-numeric feature value in {row!r}", row_no, line) from None
            if not all(math.isfinite(v) for v in feats):
                raise CSVParseError("non-finite feature value", row_no, line)
            label = row[lidx].strip()
            if label not in ("0", "1", "0.0", "1.0"):
                raise CSVParseError(f"label must be 0 or 1, got {label!r}", row_no, line)
            X.append(feats)
            y.append(int(float(label)))
            if sidx is not None:
                s = row[sidx].strip()
                if s not in SPLITS:
                    raise CSVParseError(f"unknown split value {s!r}", row_no, line)
                splits.append(s)
            if ridx is not None:
                r = row[ridx].strip() or "clean"
                if r not in REGIONS:
                    raise CSVParseError(f"unknown region value {r!r}", row_no, line)
                regions.append(r)

    X = np.asarray(X, dtype=float).reshape(len(y), len(features))
    if split is None:
        found = sorted(set(splits))
        if len(found) > 1:
            raise CSVParseError(f"{path}: rows span several splits {found}; pass split= to select one")
        split = found[0] if found else "train"
    elif splits:
        keep = np.asarray([s == split for s in splits], dtype=bool)
        X, y = X[keep], np.asarray(y)[keep]
        regions = list(np.asarray(regions, dtype=object)[keep]) if regions else regions
    return Dataset(X, np.asarray(y, dtype=np.int64), split, regions or None,
                   meta={"source": str(path), "feature_columns": features})


def export_csv(dataset, path, feature_names=None):
    """Write features with ``repr`` precision so that ``load_csv`` round-trips exactly."""
    names = feature_names or [f"x{i}" for i in range(dataset.n_features)]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ["label", "split", "region"])
        for x, label, region in zip(dataset.X, dataset.y, dataset.regions):
            writer.writerow([repr(float(v)) for v in x] + [int(label), dataset.split, region])
    return Path(path)


@dataclass(frozen=True, eq=False)
class Batch:
    X: np.ndarray
    y: np.ndarray
    class_freqs: np.ndarray
    index: np.ndarray


def minibatch_iterator(dataset, batch_size=64, seed=None, n_classes=2):
    """One shuffled epoch of minibatches (last partial batch included).

    ``seed`` may be an int or a Generator; passing the same Generator across
    epochs gives a different, reproducible order each epoch.
    """
    if batch_size < 2:
        raise ValueError("batch_size must be at least 2")
    if isinstance(dataset, Dataset):
        X, y = dataset.X, dataset.y
    else:
        X, y = dataset
    rng = as_generator(seed)
    order = rng.permutation(len(y))
    for start in range(0, len(y), batch_size):
        idx = order[start:start + batch_size]
        yb = y[idx]
        freqs = np.bincount(yb, minlength=n_classes) / yb.size
        yield Batch(X[idx], yb, freqs, idx)


def with_split(dataset, split):
    return replace(dataset, split=split)
