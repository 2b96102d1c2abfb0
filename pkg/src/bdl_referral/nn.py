"""Dense feed-forward binary classifier with hand-written reverse-mode gradients.

Weights are stored ``(fan_out, fan_in)`` so a layer computes ``a @ W.T + b``.
Hidden layers use leaky ReLU with optional inverted dropout, the output layer
is a single sigmoid unit.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .exceptions import EmptyBatchError, ShapeError

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple
    alpha: float = 0.2
    dropout_rate: float = 0.2
    l2_coefficient: float = 5e-5

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least an input and an output width")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer widths must be positive, got {sizes}")
        if sizes[-1] != 1:
            raise ValueError(f"last layer width must be 1, got {sizes[-1]}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"leaky-ReLU slope must lie in (0, 1), got {self.alpha}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.l2_coefficient < 0:
            raise ValueError("l2_coefficient must be non-negative")

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    @property
    def shapes(self):
        """``(fan_out, fan_in)`` per layer."""
        s = self.layer_sizes
        return [(s[i + 1], s[i]) for i in range(len(s) - 1)]

    def n_weights(self):
        return sum(o * i for o, i in self.shapes)

    def n_parameters(self):
        return sum(o * i + o for o, i in self.shapes)

    def to_dict(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "alpha": self.alpha,
            "dropout_rate": self.dropout_rate,
            "l2_coefficient": self.l2_coefficient,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_sizes"]), d["alpha"], d["dropout_rate"], d["l2_coefficient"])


@dataclass(frozen=True)
class ParameterSet:
    """Per-layer weights and biases; flat order is layer-major, weight (row-major) then bias."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=float) for w in self.weights))
        object.__setattr__(self, "biases", tuple(np.asarray(b, dtype=float) for b in self.biases))
        if len(self.weights) != len(self.biases):
            raise ShapeError("weights and biases must have the same number of layers")

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays):
        return cls(tuple(arrays[0::2]), tuple(arrays[1::2]))

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, spec, vector):
        vector = np.asarray(vector, dtype=float)
        arrays, pos = [], 0
        for fan_out, fan_in in spec.shapes:
            n = fan_out * fan_in
            arrays.append(vector[pos:pos + n].reshape(fan_out, fan_in))
            pos += n
            arrays.append(vector[pos:pos + fan_out].copy())
            pos += fan_out
        if pos != vector.size:
            raise ShapeError(f"flat vector has {vector.size} entries, network needs {pos}")
        return cls.from_arrays(arrays)

    def check(self, spec):
        for i, ((fan_out, fan_in), w, b) in enumerate(zip(spec.shapes, self.weights, self.biases)):
            if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise ShapeError(
                    f"layer {i}: expected weight {(fan_out, fan_in)} and bias {(fan_out,)}, "
                    f"got {w.shape} and {b.shape}"
                )
        if len(self.weights) != spec.n_layers:
            raise ShapeError(f"expected {spec.n_layers} layers, got {len(self.weights)}")
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise ValueError("parameters must be finite")


# Gradients share the exact layout of the parameters they belong to.
GradientSet = ParameterSet


def glorot_uniform_init(spec, rng):
    """Weights ~ U[-b, b] with b = sqrt(6 / (fan_in + fan_out)); zero biases."""
    weights, biases = [], []
    for fan_out, fan_in in spec.shapes:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ParameterSet(tuple(weights), tuple(biases))


def leaky_relu(z, alpha):
    return np.where(z >= 0, z, alpha * z)


def sigmoid(z):
    return expit(z)


@dataclass
class ForwardPass:
    """Everything the backward pass needs.

    ``inputs[l]`` is what layer ``l`` consumed; ``masks[l]`` is the scaled
    dropout mask applied to hidden layer ``l`` (None in eval mode).
    """

    inputs: list
    pre_activations: list
    masks: list
    logits: np.ndarray
    probs: np.ndarray = field(repr=False)


def dropout_masks(spec, n, rng):
    """Inverted-dropout masks for every hidden layer: kept units carry 1/(1-p)."""
    p = spec.dropout_rate
    masks = []
    for width in spec.layer_sizes[1:-1]:
        if p == 0:
            masks.append(None)
        else:
            keep = rng.random((n, width)) >= p
            masks.append(keep / (1.0 - p))
    return masks


def _check_batch(spec, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ShapeError(f"layer 0: batch must be 2-D (N x D), got shape {X.shape}")
    if X.shape[1] != spec.layer_sizes[0]:
        raise ShapeError(
            f"layer 0: batch width {X.shape[1]} does not match input width {spec.layer_sizes[0]}"
        )
    return X


def forward(spec, params, X, mode="eval", rng=None, masks=None):
    """Run the network; train mode draws (or reuses) dropout masks."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    X = _check_batch(spec, X)
    if mode == "train" and masks is None:
        if rng is None and spec.dropout_rate > 0:
            raise ValueError("train mode needs an rng to draw dropout masks")
        masks = dropout_masks(spec, X.shape[0], rng)
    if mode == "eval":
        masks = [None] * (spec.n_layers - 1)

    a = X
    inputs, pre = [], []
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        if a.shape[1] != w.shape[1]:
            raise ShapeError(f"layer {layer}: input width {a.shape[1]} but weight expects {w.shape[1]}")
        inputs.append(a)
        z = a @ w.T + b
        pre.append(z)
        if layer < spec.n_layers - 1:
            a = leaky_relu(z, spec.alpha)
            if masks[layer] is not None:
                a = a * masks[layer]
    logits = pre[-1][:, 0]
    return ForwardPass(inputs, pre, list(masks), logits, sigmoid(logits))


def predict_proba(spec, params, X):
    return forward(spec, params, X, "eval").probs


def class_frequencies(labels, n_classes=2):
    labels = np.asarray(labels).astype(int)
    if labels.size == 0:
        raise EmptyBatchError("cannot compute class frequencies of an empty batch")
    return np.bincount(labels, minlength=n_classes) / labels.size


def _sample_weights(labels, batch_class_freqs, n_classes):
    labels = np.asarray(labels).astype(int)
    n = labels.size
    if n == 0:
        raise EmptyBatchError("weighted cross-entropy of an empty batch")
    if batch_class_freqs is None:
        batch_class_freqs = class_frequencies(labels, n_classes)
    freqs = np.asarray(batch_class_freqs, dtype=float)[labels]
    if np.any(freqs <= 0):
        raise ValueError("every label's class must have positive batch frequency")
    return labels, 1.0 / (n_classes * n * freqs)


def weighted_cross_entropy(probs, labels, batch_class_freqs=None, n_classes=2):
    """Class-reweighted binary cross-entropy.

    Each sample's log-loss is divided by its class's frequency in the batch
    and the sum is normalised by ``1 / (K n)``.
    """
    probs = np.asarray(probs, dtype=float)
    labels, c = _sample_weights(labels, batch_class_freqs, n_classes)
    if probs.shape != labels.shape:
        raise ShapeError(f"probs shape {probs.shape} != labels shape {labels.shape}")
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_true = np.where(labels == 1, p, 1.0 - p)
    return float(-np.sum(c * np.log(p_true)))


def loss_logit_gradient(probs, labels, batch_class_freqs=None, n_classes=2):
    """d(weighted CE)/d(logit) per sample; zero where the clamp is active."""
    labels, c = _sample_weights(labels, batch_class_freqs, n_classes)
    probs = np.asarray(probs, dtype=float)
    inside = (probs > PROB_CLAMP) & (probs < 1.0 - PROB_CLAMP)
    return np.where(inside, c * (probs - labels), 0.0)


def backward_from(spec, params, fp, dlogits):
    """Propagate per-sample logit gradients through a stored forward pass."""
    n_layers = spec.n_layers
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    dz = dlogits[:, None]
    for layer in range(n_layers - 1, -1, -1):
        grads_w[layer] = dz.T @ fp.inputs[layer]
        grads_b[layer] = dz.sum(axis=0)
        if layer == 0:
            break
        da = dz @ params.weights[layer]
        mask = fp.masks[layer - 1]
        if mask is not None:
            da = da * mask
        z = fp.pre_activations[layer - 1]
        dz = np.where(z >= 0, da, spec.alpha * da)
    return grads_w, grads_b


def backward(spec, params, X, labels, batch_class_freqs=None, mode="train", rng=None,
             masks=None, n_classes=2):
    """Loss (weighted CE + L2 on weights) and its exact gradient ``(loss, GradientSet)``.

    In train mode the dropout masks drawn for the forward pass (or the ones
    passed in) are the ones differentiated through.
    """
    loss, grads, _ = loss_and_forward(spec, params, X, labels, batch_class_freqs, mode, rng,
                                      masks, n_classes)
    return loss, grads


def loss_and_forward(spec, params, X, labels, batch_class_freqs=None, mode="train", rng=None,
                     masks=None, n_classes=2):
    fp = forward(spec, params, X, mode, rng, masks)
    labels = np.asarray(labels)
    if labels.shape != fp.probs.shape:
        raise ShapeError(f"labels shape {labels.shape} != batch size {fp.probs.shape}")
    data_loss = weighted_cross_entropy(fp.probs, labels, batch_class_freqs, n_classes)
    dlogits = loss_logit_gradient(fp.probs, labels, batch_class_freqs, n_classes)
    grads_w, grads_b = backward_from(spec, params, fp, dlogits)

    lam = spec.l2_coefficient
    l2 = lam * sum(float(np.sum(w * w)) for w in params.weights)
    if lam:
        grads_w = [g + 2.0 * lam * w for g, w in zip(grads_w, params.weights)]
    return data_loss + l2, GradientSet(tuple(grads_w), tuple(grads_b)), fp
