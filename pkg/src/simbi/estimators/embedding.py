"""Embedding networks that summarise conditioning data before it reaches an estimator."""

from __future__ import annotations

import numpy as np

from simbi.neural import autograd as ag
from simbi.neural.nn import Mlp, Module


class EmbeddingNet(Module):
    """Map (standardized) conditioning vectors to an embedding.

    Kinds:
        ``identity``: pass-through.
        ``mlp``: a plain Mlp on the flat vector.
        ``mean-pool``: permutation-invariant set network. The flat input is read
        as a set of ``element_dim``-sized elements; ``phi`` embeds each element,
        the embeddings are averaged, and ``rho`` maps the mean to the output.
    """

    KINDS = ("identity", "mlp", "mean-pool")

    def __init__(
        self,
        kind: str = "identity",
        input_dim: int = 1,
        output_dim: int | None = None,
        hidden: tuple[int, ...] = (50, 50),
        element_dim: int | None = None,
        activation: str = "relu",
        rng: np.random.Generator | None = None,
    ):
        if kind not in self.KINDS:
            raise ValueError(f"unknown embedding kind {kind!r}; choose from {self.KINDS}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kind = kind
        self.input_dim = int(input_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.element_dim = int(element_dim) if element_dim else self.input_dim
        if kind == "identity":
            self.output_dim = self.input_dim
            self.phi = self.rho = None
        elif kind == "mlp":
            self.output_dim = int(output_dim or self.input_dim)
            self.phi = Mlp([self.input_dim, *self.hidden, self.output_dim], activation, rng)
            self.rho = None
        else:
            if self.input_dim % self.element_dim:
                raise ValueError("input_dim must be a multiple of element_dim for a set embedding")
            self.output_dim = int(output_dim or self.element_dim)
            width = self.hidden[-1] if self.hidden else self.element_dim
            self.phi = Mlp([self.element_dim, *self.hidden], activation, rng) if self.hidden else None
            self.rho = Mlp([width, width, self.output_dim], activation, rng)

    @property
    def is_set(self) -> bool:
        return self.kind == "mean-pool"

    def parameters(self):
        return [p for net in (self.phi, self.rho) if net is not None for p in net.parameters()]

    def __call__(self, x):
        """Embed a batch ``(n, k * element_dim)`` (sets may have any size ``k`` >= 1)."""
        x = ag.as_tensor(x)
        if self.kind == "identity":
            return x
        if self.kind == "mlp":
            return self.phi(x)
        n, width = x.shape
        if width == 0 or width % self.element_dim:
            raise ValueError(f"set input of width {width} is not a non-empty set of {self.element_dim}-vectors")
        k = width // self.element_dim
        elems = x.reshape(n * k, self.element_dim)
        h = self.phi(elems) if self.phi is not None else elems
        h = h.reshape(n, k, h.shape[-1])
        if k > 1:
            # summing in sorted order makes the pooled value bit-identical under any element order
            order = np.argsort(h.data, axis=1, kind="stable")
            h = h[np.arange(n)[:, None, None], order, np.arange(h.shape[-1])[None, None, :]]
            # anchoring at the smallest element makes k identical elements pool to that element exactly
            first = h[:, 0, :]
            pooled = first + (h - first.reshape(n, 1, -1)).mean(axis=1)
        else:
            pooled = h.reshape(n, h.shape[-1])
        return self.rho(pooled)

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden": list(self.hidden),
            "element_dim": self.element_dim,
            "activation": self.activation,
        }

    @classmethod
    def from_config(cls, cfg: dict, rng: np.random.Generator | None = None) -> "EmbeddingNet":
        cfg = dict(cfg)
        cfg["hidden"] = tuple(cfg.get("hidden", (50, 50)))
        return cls(rng=rng, **cfg)


def embed(e: EmbeddingNet, x) -> np.ndarray:
    """Evaluate an embedding on a vector, a batch of vectors, or a set given as rows.

    A 2-d input to a set embedding is interpreted as one set whose rows are the
    elements; otherwise 2-d inputs are a batch.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot embed an empty input")
    if e.is_set and x.ndim == 2 and x.shape[1] == e.element_dim:
        x = x.reshape(1, -1)
    single = x.ndim == 1
    with ag.no_grad():
        out = e(np.atleast_2d(x)).data
    return out[0] if single else out
