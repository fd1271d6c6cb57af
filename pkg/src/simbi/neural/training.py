"""The preconfigured training loop shared by every estimator."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from simbi.neural import autograd as ag
from simbi.neural.nn import Module
from simbi.neural.optim import AdamState, adam_step, clip_grad_norm

logger = logging.getLogger(__name__)

LossFn = Callable[[Module, Mapping[str, np.ndarray], np.random.Generator], ag.Tensor]


class TrainingError(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 200
    validation_fraction: float = 0.1
    patience: int = 20
    max_epochs: int = 2**14
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate and clip_norm must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if self.patience < 0:
            raise ValueError("patience must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = np.inf
    n_train: int = 0
    n_val: int = 0

    @property
    def epochs(self) -> int:
        return len(self.val_losses)


def _take(data: Mapping[str, np.ndarray], idx: np.ndarray) -> dict[str, np.ndarray]:
    return {k: v[idx] for k, v in data.items()}


def _eval_loss(model, loss_fn, data, seed) -> float:
    with ag.no_grad():
        return float(loss_fn(model, data, np.random.default_rng(seed)).data)


def train(model: Module, data: Mapping[str, np.ndarray], loss_fn: LossFn, cfg: TrainConfig | None = None) -> TrainResult:
    """Fit ``model`` by minibatch Adam with early stopping on a held-out split.

    ``data`` maps names to arrays sharing a leading row dimension; ``loss_fn``
    receives a row subset of it and returns the mean loss as a scalar Tensor.
    The model is left holding the parameters of the best validation epoch.
    Per-epoch losses are evaluated on the full train/validation splits at the
    end of each epoch, with a fixed generator so they are comparable.
    """
    cfg = cfg or TrainConfig()
    sizes = {len(v) for v in data.values()}
    if len(sizes) != 1:
        raise ValueError("all training arrays must have the same number of rows")
    n = sizes.pop()
    n_val = max(1, int(round(cfg.validation_fraction * n)))
    n_train = n - n_val
    if n_train < 2:
        raise ValueError(f"need at least 2 training rows after the validation split, got {n_train}")

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    train_data = _take(data, perm[n_val:])
    val_data = _take(data, perm[:n_val])
    loss_rng = np.random.default_rng(rng.integers(2**63))
    eval_seed = int(rng.integers(2**63))

    params = model.parameters()
    state = AdamState.zeros_like([p.data for p in params])
    result = TrainResult(n_train=n_train, n_val=n_val)
    best_flat = model.get_flat()
    since_improvement = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n_train)
        for b, start in enumerate(range(0, n_train, cfg.batch_size)):
            batch = _take(train_data, order[start : start + cfg.batch_size])
            loss = loss_fn(model, batch, loss_rng)
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = ag.grad(loss, params)
            grads, _ = clip_grad_norm(grads, cfg.clip_norm)
            new, state = adam_step([p.data for p in params], grads, state, cfg.learning_rate)
            for p, v in zip(params, new):
                p.data = v

        train_loss = _eval_loss(model, loss_fn, train_data, eval_seed)
        val_loss = _eval_loss(model, loss_fn, val_data, eval_seed)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingError(f"non-finite evaluation loss at epoch {epoch}")
        result.train_losses.append(train_loss)
        result.val_losses.append(val_loss)

        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_flat = model.get_flat()
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement > cfg.patience:
                break

    model.set_flat(best_flat)
    logger.debug("trained %d epochs, best %d (val %.5f)", result.epochs, result.best_epoch, result.best_val_loss)
    return result
