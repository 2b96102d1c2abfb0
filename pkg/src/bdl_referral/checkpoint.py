"""JSON checkpoints for every fitted estimator.

Layout::

    {"format_version": 1, "method_tag": ..., "hyperparameters": {...},
     "spec": {...}, "parameters": {"layers": [{"shape", "weight", "bias"}]},
     "training": {"seed", "epochs", "best_epoch", "final_loss"}}

Weights are flattened row-major, layers in order. MFVI replaces
``parameters`` with ``variational`` (mu/rho per layer plus the prior scale);
ensembles carry a ``members`` list of member checkpoints and the random
baseline a ``base`` checkpoint. Floats are written with ``repr`` precision,
so loading is value-exact.
"""

import json
import math
from pathlib import Path

import numpy as np

from . import methods
from .exceptions import CheckpointError, IncompatibleCheckpointError
from .nn import NetworkSpec, ParameterSet
from .variational import VariationalParams

FORMAT_VERSION = 1


def _floats(a):
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _layers(params):
    return [{"shape": list(w.shape), "weight": _floats(w), "bias": _floats(b)}
            for w, b in zip(params.weights, params.biases)]


def _params_from_layers(layers):
    weights, biases = [], []
    for layer in layers:
        weights.append(np.asarray(layer["weight"], dtype=float).reshape(layer["shape"]))
        biases.append(np.asarray(layer["bias"], dtype=float))
    return ParameterSet(tuple(weights), tuple(biases))


def _jsonable_params(est):
    out = {}
    for k, v in est.get_params(deep=False).items():
        if k == "base_estimator":
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def _restore_params(d):
    d = dict(d)
    if "hidden_layer_sizes" in d:
        d["hidden_layer_sizes"] = tuple(d["hidden_layer_sizes"])
    return d


def _training_block(est):
    loss = est.final_loss_
    return {
        "seed": est.seed_,
        "epochs": est.n_epochs_,
        "best_epoch": est.best_epoch_,
        "final_loss": None if not math.isfinite(loss) else loss,
        "train_loss": list(est.train_loss_),
        "val_loss": list(est.val_loss_),
    }


def to_dict(est):
    tag = est.method_tag
    if tag not in methods.METHOD_TAGS:
        raise ValueError(f"cannot checkpoint estimator with method tag {tag!r}")
    d = {"format_version": FORMAT_VERSION, "method_tag": tag,
         "hyperparameters": _jsonable_params(est)}
    if tag in ("deterministic", "mc_dropout"):
        d["spec"] = est.spec_.to_dict()
        d["parameters"] = {"layers": _layers(est.params_)}
        d["training"] = _training_block(est)
    elif tag == "mfvi":
        d["spec"] = est.spec_.to_dict()
        vp = est.vparams_
        d["variational"] = {
            "prior_sigma": vp.prior_sigma,
            "mu": {"layers": _layers(vp.mu)},
            "rho": {"layers": _layers(vp.rho)},
        }
        d["training"] = _training_block(est)
    elif tag in ("deep_ensemble", "ensemble_mc_dropout"):
        d["seed"] = est.seed_
        d["members"] = [to_dict(m) for m in est.members_]
    else:
        d["seed"] = est.seed_
        d["base"] = to_dict(est.base_estimator_)
    return d


def _restore_training(est, block, n_features):
    est.seed_ = block["seed"]
    est.n_epochs_ = block["epochs"]
    est.best_epoch_ = block["best_epoch"]
    est.train_loss_ = list(block["train_loss"])
    est.val_loss_ = list(block["val_loss"])
    est.classes_ = np.array([0, 1])
    est.n_features_in_ = n_features


def from_dict(d):
    if not isinstance(d, dict):
        raise CheckpointError("checkpoint must be a JSON object")
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise IncompatibleCheckpointError(
            f"checkpoint format_version {version!r} is incompatible with {FORMAT_VERSION}")
    try:
        tag = d["method_tag"]
        cls = methods.ESTIMATORS[tag]
        hp = _restore_params(d["hyperparameters"])
        if tag in ("deterministic", "mc_dropout"):
            est = cls(**hp)
            est.spec_ = NetworkSpec.from_dict(d["spec"])
            est.params_ = _params_from_layers(d["parameters"]["layers"])
            est.params_.check(est.spec_)
            _restore_training(est, d["training"], est.spec_.layer_sizes[0])
        elif tag == "mfvi":
            est = cls(**hp)
            est.spec_ = NetworkSpec.from_dict(d["spec"])
            v = d["variational"]
            est.vparams_ = VariationalParams(_params_from_layers(v["mu"]["layers"]),
                                             _params_from_layers(v["rho"]["layers"]),
                                             v["prior_sigma"])
            est.vparams_.mu.check(est.spec_)
            _restore_training(est, d["training"], est.spec_.layer_sizes[0])
        elif tag in ("deep_ensemble", "ensemble_mc_dropout"):
            est = cls(**hp)
            est.members_ = [from_dict(m) for m in d["members"]]
            est.seed_ = d["seed"]
            est.classes_ = np.array([0, 1])
            est.n_features_in_ = est.members_[0].n_features_in_
        else:
            base = from_dict(d["base"])
            est = cls(**hp)
            est.base_estimator = methods.ESTIMATORS[base.method_tag](**base.get_params())
            est.base_estimator_ = base
            est.seed_ = d["seed"]
            est.classes_ = np.array([0, 1])
            est.n_features_in_ = base.n_features_in_
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc!r}") from exc
    return est


def dumps(est):
    return json.dumps(to_dict(est), sort_keys=True, allow_nan=False)


def save(est, path):
    path = Path(path)
    path.write_text(dumps(est) + "\n")
    return path


def load(path):
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(d)


def checkpoint_roundtrip(est, path):
    save(est, path)
    return load(path)
