"""Feed-forward building blocks and input standardization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from simbi.neural import autograd as ag
from simbi.neural.autograd import Tensor

ACTIVATIONS = {"relu": ag.relu, "tanh": ag.tanh}


class Module:
    """Base class: anything owning parameter tensors."""

    def parameters(self) -> list[Tensor]:
        raise NotImplementedError

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def get_flat(self) -> np.ndarray:
        params = self.parameters()
        if not params:
            return np.zeros(0)
        return np.concatenate([p.data.ravel() for p in params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_parameters():
            raise ValueError(f"expected {self.n_parameters()} values, got {flat.size}")
        i = 0
        for p in self.parameters():
            n = p.data.size
            p.data = flat[i : i + n].reshape(p.data.shape).copy()
            i += n

    def zero_(self) -> None:
        """Set every weight and bias to zero (used for identity-initialised tests)."""
        self.set_flat(np.zeros(self.n_parameters()))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(max(n_in, 1))
        self.n_in, self.n_out = n_in, n_out
        self.weight = Tensor(rng.uniform(-bound, bound, (n_in, n_out)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, (n_out,)), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x):
        return ag.matmul(x, self.weight) + self.bias


class MaskedLinear(Linear):
    """Linear layer whose weight is multiplied by a fixed 0/1 connectivity mask."""

    def __init__(self, n_in: int, n_out: int, mask: np.ndarray, rng: np.random.Generator):
        super().__init__(n_in, n_out, rng)
        if mask.shape != (n_in, n_out):
            raise ValueError("mask shape must be (n_in, n_out)")
        self.mask = mask.astype(np.float64)

    def __call__(self, x):
        return ag.matmul(x, self.weight * self.mask) + self.bias


class Mlp(Module):
    """Fully connected network with a linear output layer.

    Args:
        widths: layer widths including input and output, e.g. ``[2, 50, 50, 1]``.
        activation: ``"relu"`` or ``"tanh"``; applied after every hidden layer.
        rng: generator used for the uniform fan-in initialisation.
    """

    def __init__(self, widths: Sequence[int], activation: str = "relu", rng: np.random.Generator | None = None):
        if len(widths) < 2:
            raise ValueError("an Mlp needs at least input and output widths")
        if any(int(w) < 1 for w in widths):
            raise ValueError("layer widths must be positive")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; choose from {sorted(ACTIVATIONS)}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.widths = [int(w) for w in widths]
        self.activation = activation
        self.layers = [Linear(a, b, rng) for a, b in zip(self.widths[:-1], self.widths[1:])]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, x):
        act = ACTIVATIONS[self.activation]
        h = x
        for layer in self.layers[:-1]:
            h = act(layer(h))
        return self.layers[-1](h)


@dataclass
class Standardizer:
    """Per-dimension z-scoring fitted on training data."""

    mean: np.ndarray
    std: np.ndarray
    min_std: float = 1e-14

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), self.min_std)

    @classmethod
    def fit(cls, data: np.ndarray, min_std: float = 1e-14) -> "Standardizer":
        data = np.asarray(data, dtype=np.float64)
        return cls(data.mean(axis=0), data.std(axis=0), min_std)

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def log_scale(self) -> float:
        """Sum of log standard deviations: the log-Jacobian of destandardization."""
        return float(np.sum(np.log(self.std)))

    def standardize(self, v):
        return (v - self.mean) / self.std

    def destandardize(self, v):
        return v * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "min_std": self.min_std}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.array(d["mean"]), np.array(d["std"]), d.get("min_std", 1e-14))


def standardize(s: Standardizer, v):
    return s.standardize(v)


def destandardize(s: Standardizer, v):
    return s.destandardize(v)
