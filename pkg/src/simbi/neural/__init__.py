"""Tensor substrate: autodiff, networks, optimizer, training loop."""

from simbi.neural.autograd import Tensor, backward, grad, no_grad
from simbi.neural.nn import Linear, MaskedLinear, Mlp, Module, Standardizer, destandardize, standardize
from simbi.neural.optim import AdamState, adam_step, clip_grad_norm
from simbi.neural.training import TrainConfig, TrainingError, TrainResult, train

__all__ = [
    "AdamState",
    "Linear",
    "MaskedLinear",
    "Mlp",
    "Module",
    "Standardizer",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "adam_step",
    "backward",
    "clip_grad_norm",
    "destandardize",
    "grad",
    "no_grad",
    "standardize",
    "train",
]
