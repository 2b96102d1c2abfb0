"""Minibatch Adam training loop shared by every method."""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .data import minibatch_iterator
from .exceptions import TrainingError
from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 4e-4
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    arrays: list
    train_loss: list
    val_loss: list
    best_epoch: int
    n_epochs: int

    @property
    def final_loss(self):
        return self.train_loss[-1] if self.train_loss else float("nan")


def check_binary_targets(y):
    y = np.asarray(y)
    present = np.unique(y)
    if present.size < 2:
        raise TrainingError(f"training data must contain both classes, found only {present.tolist()}")
    if not np.all(np.isin(present, (0, 1))):
        raise TrainingError(f"labels must be 0/1, found {present.tolist()}")
    return y.astype(np.int64)


def fit(arrays, loss_and_grads, X, y, cfg, data_rng, val_loss=None):
    """Run Adam over shuffled minibatches.

    ``loss_and_grads(arrays, batch)`` returns ``(loss, grads)``. With a
    ``val_loss(arrays)`` callable, training stops after ``cfg.patience``
    epochs without improvement and the best arrays are returned.
    """
    y = check_binary_targets(y)
    state = AdamState.zeros_like(arrays, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    arrays = [np.array(a, dtype=float) for a in arrays]
    best = (np.inf, [a.copy() for a in arrays], 0)
    train_hist, val_hist = [], []
    stale = 0
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        total, count = 0.0, 0
        for batch in minibatch_iterator((X, y), cfg.batch_size, data_rng):
            loss, grads = loss_and_grads(arrays, batch)
            arrays, state = adam_step(state, arrays, grads)
            total += loss * batch.y.size
            count += batch.y.size
        train_hist.append(total / count)
        if val_loss is None:
            continue
        v = float(val_loss(arrays))
        val_hist.append(v)
        if v < best[0]:
            best = (v, [a.copy() for a in arrays], epoch)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.debug("early stop at epoch %d (best %d)", epoch, best[2])
                break
    if val_loss is None:
        return TrainResult(arrays, train_hist, val_hist, epoch, epoch)
    return TrainResult(best[1], train_hist, val_hist, best[2], epoch)
