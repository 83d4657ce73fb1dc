"""Mini-batch training with validation-loss model selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rulforge.nn.network import Network
from rulforge.nn.optim import Adam, AdamConfig


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    epochs: int = 300
    patience: int | None = 50
    # draw this many training windows per epoch (seeded); None uses all of them
    samples_per_epoch: int | None = None
    validation_fraction: float = 0.15
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 or None")
        if self.samples_per_epoch is not None and self.samples_per_epoch < 1:
            raise ValueError("samples_per_epoch must be >= 1 or None")

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.eps)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainingResult:
    network: Network
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_loss: float | None = None

    @property
    def trained(self) -> bool:
        return self.best_epoch is not None


def mse(network: Network, X, y, batch_size: int = 256) -> float:
    pred = network.predict(X, batch_size)
    return float(np.mean((pred - np.asarray(y, dtype=np.float64)) ** 2))


def train_network(network: Network, X, y, config: TrainingConfig, X_val=None, y_val=None,
                  log=None) -> TrainingResult:
    """Train ``network`` in place and restore the weights of the best validation epoch.

    Without an explicit validation set the last ``validation_fraction`` of the
    samples (after a seeded shuffle) is held out.  ``epochs=0`` leaves the
    network at its initial weights and flags it untrained.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    if X_val is None:
        order = rng.permutation(X.shape[0])
        n_val = max(1, int(round(config.validation_fraction * X.shape[0])))
        X_val, y_val = X[order[-n_val:]], y[order[-n_val:]]
        X, y = X[order[:-n_val]], y[order[:-n_val]]
    result = TrainingResult(network)
    network.trained = False
    if config.epochs == 0 or X.shape[0] == 0:
        return result

    opt = Adam(network.parameters(), config.adam)
    best_weights = network.get_weights()
    best, stale = np.inf, 0
    n = X.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        if config.samples_per_epoch is not None:
            order = order[:config.samples_per_epoch]
        total = 0.0
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = network.loss_and_grads(X[idx], y[idx], train=True, rng=rng)
            opt.step(grads)
            total += loss * idx.size
        result.train_loss.append(total / order.size)
        val = mse(network, X_val, y_val)
        result.val_loss.append(val)
        if val < best:
            best, stale = val, 0
            best_weights = network.get_weights()
            result.best_epoch, result.best_val_loss = epoch, val
        else:
            stale += 1
        if log is not None:
            log(epoch, result.train_loss[-1], val)
        if config.patience is not None and stale >= config.patience:
            break
    network.set_weights(best_weights)
    network.trained = True
    return result
