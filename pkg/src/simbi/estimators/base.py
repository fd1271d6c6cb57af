"""Shared plumbing for conditional estimators: standardization, embedding, serialization."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from simbi.estimators.embedding import EmbeddingNet
from simbi.neural import autograd as ag
from simbi.neural.nn import Module, Standardizer


def _rows(a, width: int, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a = a.reshape(1, -1) if a.ndim == 1 else a
    if a.ndim != 2 or a.shape[1] != width:
        raise ValueError(f"{what} must have {width} columns, got shape {a.shape}")
    return a


class ConditionalEstimator(Module):
    """Base for networks conditioned on a vector that first passes an embedding.

    Conditioning vectors are z-scored element-wise (per set element for set
    embeddings) before embedding; subclasses work in standardized coordinates.
    """

    kind = ""

    def __init__(self, cond_dim: int, embedding: EmbeddingNet | None, rng: np.random.Generator):
        self.cond_dim = int(cond_dim)
        self.embedding = embedding if embedding is not None else EmbeddingNet("identity", self.cond_dim)
        if self.embedding.input_dim != self.cond_dim and not self.embedding.is_set:
            raise ValueError("embedding input_dim must equal the conditioning dimension")
        self.cond_std = Standardizer.identity(self.embedding.element_dim)

    @property
    def embed_dim(self) -> int:
        return self.embedding.output_dim

    def net_parameters(self) -> list[ag.Tensor]:
        raise NotImplementedError

    def parameters(self):
        return self.embedding.parameters() + self.net_parameters()

    def check_cond(self, cond) -> np.ndarray:
        cond = np.asarray(cond, dtype=np.float64)
        cond = cond.reshape(1, -1) if cond.ndim == 1 else cond
        ok = cond.shape[1] == self.cond_dim or (self.embedding.is_set and cond.shape[1] % self.embedding.element_dim == 0)
        if cond.ndim != 2 or not ok or cond.shape[1] == 0:
            raise ValueError(f"conditioning vectors must have {self.cond_dim} columns, got shape {cond.shape}")
        return cond

    def embed_cond(self, cond: np.ndarray) -> ag.Tensor:
        n, width = cond.shape
        e = self.embedding.element_dim
        z = self.cond_std.standardize(cond.reshape(-1, e)).reshape(n, width)
        return self.embedding(z)

    def fit_cond_standardizer(self, cond: np.ndarray) -> None:
        self.cond_std = Standardizer.fit(np.asarray(cond).reshape(-1, self.embedding.element_dim))

    # serialization --------------------------------------------------------------
    def architecture(self) -> dict:
        raise NotImplementedError

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "architecture": self.architecture(),
            "embedding": self.embedding.config(),
            "standardizers": self.standardizers(),
        }

    def standardizers(self) -> dict:
        return {"cond": self.cond_std.to_dict()}

    def load_standardizers(self, d: Mapping) -> None:
        self.cond_std = Standardizer.from_dict(d["cond"])


class DensityEstimator(ConditionalEstimator):
    """A conditional density ``q(target | cond)`` over R^target_dim."""

    def __init__(self, target_dim: int, cond_dim: int, embedding: EmbeddingNet | None, rng: np.random.Generator):
        super().__init__(cond_dim, embedding, rng)
        self.target_dim = int(target_dim)
        self.target_std = Standardizer.identity(self.target_dim)

    def fit_standardizers(self, target: np.ndarray, cond: np.ndarray) -> None:
        self.target_std = Standardizer.fit(target)
        self.fit_cond_standardizer(cond)

    def standardizers(self) -> dict:
        return {"cond": self.cond_std.to_dict(), "target": self.target_std.to_dict()}

    def load_standardizers(self, d: Mapping) -> None:
        super().load_standardizers(d)
        self.target_std = Standardizer.from_dict(d["target"])

    def log_prob_std(self, target: ag.Tensor | np.ndarray, emb: ag.Tensor) -> ag.Tensor:
        """Log-density in standardized target coordinates, one value per row."""
        raise NotImplementedError

    def sample_std(self, emb: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def loss(self, batch: Mapping[str, np.ndarray]) -> ag.Tensor:
        """Mean negative log-likelihood in standardized coordinates."""
        t = self.target_std.standardize(batch["target"])
        return -ag.mean(self.log_prob_std(t, self.embed_cond(batch["cond"])))

    def log_prob(self, target, cond) -> np.ndarray:
        """``log q(target | cond)`` in original coordinates; ``cond`` may be a single row."""
        target = _rows(target, self.target_dim, "target")
        cond = self.check_cond(cond)
        if cond.shape[0] == 1 and target.shape[0] > 1:
            cond = np.repeat(cond, target.shape[0], axis=0)
        if cond.shape[0] != target.shape[0]:
            raise ValueError("target and cond must have equal row counts (or cond a single row)")
        with ag.no_grad():
            lp = self.log_prob_std(self.target_std.standardize(target), self.embed_cond(cond)).data
        return lp - self.target_std.log_scale

    def sample(self, cond, n: int, rng: np.random.Generator) -> np.ndarray:
        cond = self.check_cond(cond)
        if cond.shape[0] != 1:
            raise ValueError("sample() conditions on exactly one vector")
        with ag.no_grad():
            emb = self.embed_cond(cond).data
        return self.target_std.destandardize(self.sample_std(emb, int(n), rng))
