"""Ratio classifier for neural ratio estimation."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from simbi.estimators.base import ConditionalEstimator, _rows
from simbi.estimators.embedding import EmbeddingNet
from simbi.neural import autograd as ag
from simbi.neural.nn import Mlp, Standardizer


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """A random permutation without fixed points (one random n-cycle)."""
    if n < 2:
        raise ValueError("a derangement needs at least two elements")
    order = rng.permutation(n)
    sigma = np.empty(n, dtype=int)
    sigma[order] = np.roll(order, -1)
    return sigma


class RatioClassifier(ConditionalEstimator):
    """Logit ``l(theta, x)`` of an Mlp on ``[theta, embed(x)]``.

    Trained to separate joint pairs from shuffled pairs, the optimal logit is
    ``log p(theta, x) - log p(theta) p(x)``.
    """

    kind = "ratio-classifier"

    def __init__(
        self,
        theta_dim: int,
        x_dim: int,
        hidden: tuple[int, ...] = (50, 50),
        activation: str = "relu",
        embedding: EmbeddingNet | None = None,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(x_dim, embedding, rng)
        self.theta_dim = int(theta_dim)
        self.hidden, self.activation = tuple(hidden), activation
        self.theta_std = Standardizer.identity(self.theta_dim)
        self.net = Mlp([self.theta_dim + self.embed_dim, *self.hidden, 1], activation, rng)

    def net_parameters(self):
        return self.net.parameters()

    def architecture(self):
        return {
            "theta_dim": self.theta_dim,
            "x_dim": self.cond_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
        }

    def fit_standardizers(self, theta: np.ndarray, x: np.ndarray) -> None:
        self.theta_std = Standardizer.fit(theta)
        self.fit_cond_standardizer(x)

    def standardizers(self):
        return {"cond": self.cond_std.to_dict(), "theta": self.theta_std.to_dict()}

    def load_standardizers(self, d):
        super().load_standardizers(d)
        self.theta_std = Standardizer.from_dict(d["theta"])

    def logits_from(self, theta_std, emb) -> ag.Tensor:
        return self.net(ag.concat([ag.as_tensor(theta_std), emb], axis=1)).reshape(-1)

    def loss(self, batch: Mapping[str, np.ndarray], rng: np.random.Generator) -> ag.Tensor:
        """Binary cross-entropy on joint pairs (label 1) and deranged pairs (label 0)."""
        theta, x = batch["theta"], batch["x"]
        n = theta.shape[0]
        if n < 2:
            raise ValueError("classifier loss needs a batch of at least 2 pairs")
        sigma = derangement(n, rng)
        t = self.theta_std.standardize(theta)
        emb = self.embed_cond(x)
        joint = self.logits_from(t, emb)
        marginal = self.logits_from(t[sigma], emb)
        return 0.5 * (ag.mean(ag.softplus(-joint)) + ag.mean(ag.softplus(marginal)))

    def logit(self, theta, x) -> np.ndarray:
        """Evaluate the logit; either argument may be a single row broadcast to the other."""
        theta = _rows(theta, self.theta_dim, "theta")
        x = self.check_cond(x)
        n = max(theta.shape[0], x.shape[0])
        if theta.shape[0] == 1:
            theta = np.repeat(theta, n, axis=0)
        if x.shape[0] == 1:
            x = np.repeat(x, n, axis=0)
        if theta.shape[0] != x.shape[0]:
            raise ValueError("theta and x must have equal row counts (or one of them a single row)")
        with ag.no_grad():
            return self.logits_from(self.theta_std.standardize(theta), self.embed_cond(x)).data


def classifier_loss(cl: RatioClassifier, theta, x, rng: np.random.Generator) -> float:
    with ag.no_grad():
        return float(cl.loss({"theta": np.atleast_2d(theta), "x": np.atleast_2d(x)}, rng).data)
