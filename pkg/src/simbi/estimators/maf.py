"""Conditional masked autoregressive flow.

Direction convention: the *forward* transform maps a (standardized) target
``t`` to base noise ``u``. Each layer computes

    u_i = (t_i - shift_i(t_<i, c)) * exp(-logscale_i(t_<i, c))

so ``log|det du/dt| = -sum_i logscale_i`` and

    log q(t | c) = log N(u; 0, I) - sum_layers sum_i logscale_i.

Sampling inverts the layers one dimension at a time. The variable order is
reversed between consecutive layers.
"""

from __future__ import annotations

import numpy as np

from simbi.estimators.base import DensityEstimator
from simbi.estimators.embedding import EmbeddingNet
from simbi.neural import autograd as ag
from simbi.neural.nn import ACTIVATIONS, MaskedLinear, Module

LOG_SCALE_CLAMP = 7.0
_LOG_2PI = float(np.log(2.0 * np.pi))


def made_masks(dim: int, cond_dim: int, hidden: tuple[int, ...]) -> list[np.ndarray]:
    """Connectivity masks so that output ``i`` sees only inputs ``< i`` and the context.

    Input degrees: target ``i`` -> ``i + 1``, context -> 0. Hidden degrees
    cycle through ``0 .. dim - 1``. Output ``i`` has degree ``i + 1`` and
    connects to hidden units of strictly smaller degree.
    """
    in_deg = np.concatenate([np.arange(1, dim + 1), np.zeros(cond_dim, dtype=int)])
    degrees = [in_deg]
    for h in hidden:
        degrees.append(np.arange(h) % max(dim, 1))
    masks = [(d_out[None, :] >= d_in[:, None]).astype(float) for d_in, d_out in zip(degrees[:-1], degrees[1:])]
    out_deg = np.tile(np.arange(1, dim + 1), 2)
    masks.append((out_deg[None, :] > degrees[-1][:, None]).astype(float))
    return masks


class Made(Module):
    def __init__(self, dim: int, cond_dim: int, hidden: tuple[int, ...], activation: str, rng):
        self.dim = dim
        masks = made_masks(dim, cond_dim, hidden)
        widths = [dim + cond_dim, *hidden, 2 * dim]
        self.layers = [MaskedLinear(a, b, m, rng) for a, b, m in zip(widths[:-1], widths[1:], masks)]
        self.act = ACTIVATIONS[activation]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, t, emb):
        h = ag.concat([t, emb], axis=1)
        for layer in self.layers[:-1]:
            h = self.act(layer(h))
        out = self.layers[-1](h)
        shift = out[:, : self.dim]
        log_scale = ag.clip(out[:, self.dim :], -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
        return shift, log_scale


class MafEstimator(DensityEstimator):
    kind = "maf"

    def __init__(
        self,
        target_dim: int,
        cond_dim: int,
        n_layers: int = 5,
        hidden: tuple[int, ...] = (50, 50),
        activation: str = "relu",
        embedding: EmbeddingNet | None = None,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(target_dim, cond_dim, embedding, rng)
        self.n_layers, self.hidden, self.activation = int(n_layers), tuple(hidden), activation
        self.mades = [Made(self.target_dim, self.embed_dim, self.hidden, activation, rng) for _ in range(self.n_layers)]
        self._reverse = np.arange(self.target_dim)[::-1].copy()

    def net_parameters(self):
        return [p for m in self.mades for p in m.parameters()]

    def architecture(self):
        return {
            "target_dim": self.target_dim,
            "cond_dim": self.cond_dim,
            "n_layers": self.n_layers,
            "hidden": list(self.hidden),
            "activation": self.activation,
        }

    def forward(self, t, emb):
        """Map standardized targets to base noise; returns (u, log|det du/dt|)."""
        h = ag.as_tensor(t)
        logdet = 0.0
        for i, made in enumerate(self.mades):
            shift, log_scale = made(h, emb)
            h = (h - shift) * ag.exp(-log_scale)
            logdet = logdet - log_scale.sum(axis=1)
            if i < self.n_layers - 1:
                h = h[:, self._reverse]
        return h, logdet

    def inverse(self, u: np.ndarray, emb: np.ndarray) -> np.ndarray:
        """Exact inverse of :meth:`forward` by sequential per-dimension solves."""
        emb = np.broadcast_to(np.atleast_2d(emb), (u.shape[0], self.embed_dim))
        z = np.asarray(u, dtype=np.float64)
        with ag.no_grad():
            for i in range(self.n_layers - 1, -1, -1):
                if i < self.n_layers - 1:
                    z = z[:, self._reverse]
                made = self.mades[i]
                t = np.zeros_like(z)
                for j in range(self.target_dim):
                    shift, log_scale = made(t, emb)
                    t[:, j] = z[:, j] * np.exp(log_scale.data[:, j]) + shift.data[:, j]
                z = t
        return z

    def log_prob_std(self, target, emb):
        u, logdet = self.forward(target, emb)
        base = -0.5 * (u * u).sum(axis=1) - 0.5 * self.target_dim * _LOG_2PI
        return base + logdet

    def sample_std(self, emb, n, rng):
        return self.inverse(rng.standard_normal((n, self.target_dim)), emb)


def maf_log_prob(f: MafEstimator, theta, c) -> np.ndarray:
    return f.log_prob(theta, c)


def maf_sample(f: MafEstimator, c, n: int, rng: np.random.Generator) -> np.ndarray:
    return f.sample(c, n, rng)
