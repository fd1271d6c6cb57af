"""Mixture density network with full-covariance Gaussian components."""

from __future__ import annotations

import numpy as np

from simbi.estimators.base import DensityEstimator
from simbi.estimators.embedding import EmbeddingNet
from simbi.neural import autograd as ag
from simbi.neural.nn import Mlp

DIAG_FLOOR = 1e-6
_LOG_2PI = float(np.log(2.0 * np.pi))


class MdnEstimator(DensityEstimator):
    """``q(t | c) = sum_k alpha_k(c) N(t; mu_k(c), L_k(c) L_k(c)^T)``.

    One backbone Mlp emits, per component, a mixture logit, a mean and the
    ``d(d+1)/2`` lower-triangular entries of the covariance Cholesky factor.
    Diagonal entries go through ``softplus + 1e-6``; the strict lower triangle
    is unconstrained.
    """

    kind = "mdn"

    def __init__(
        self,
        target_dim: int,
        cond_dim: int,
        n_components: int = 10,
        hidden: tuple[int, ...] = (50, 50),
        activation: str = "relu",
        embedding: EmbeddingNet | None = None,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(target_dim, cond_dim, embedding, rng)
        d, K = self.target_dim, int(n_components)
        self.n_components, self.hidden, self.activation = K, tuple(hidden), activation
        self.n_tri = d * (d + 1) // 2
        self.backbone = Mlp([self.embed_dim, *self.hidden, K * (1 + d + self.n_tri)], activation, rng)

        rows, cols = np.tril_indices(d)
        # placement matrix scatters packed triangle entries into a flat d*d matrix
        self._place = np.zeros((self.n_tri, d * d))
        self._place[np.arange(self.n_tri), rows * d + cols] = 1.0
        self._diag_pos = np.flatnonzero(rows == cols)
        self._strict = np.tril(np.ones((d, d)), -1)
        self._eye = np.eye(d)

    def net_parameters(self):
        return self.backbone.parameters()

    def architecture(self):
        return {
            "target_dim": self.target_dim,
            "cond_dim": self.cond_dim,
            "n_components": self.n_components,
            "hidden": list(self.hidden),
            "activation": self.activation,
        }

    def heads(self, emb):
        """Return (log mixture weights [n,K], means [n,K,d], L [n,K,d,d], log diag(L) [n,K,d])."""
        n = emb.shape[0]
        d, K = self.target_dim, self.n_components
        out = self.backbone(emb)
        logits = out[:, :K]
        means = out[:, K : K + K * d].reshape(n, K, d)
        tri = out[:, K + K * d :].reshape(n, K, self.n_tri)
        raw = ag.matmul(tri, self._place).reshape(n, K, d, d)
        diag_vals = ag.softplus(tri[:, :, self._diag_pos]) + DIAG_FLOOR
        L = raw * self._strict + ag.softplus(raw) * self._eye + DIAG_FLOOR * self._eye
        return ag.log_softmax(logits, axis=1), means, L, ag.log(diag_vals)

    def log_prob_std(self, target, emb):
        log_w, means, L, log_diag = self.heads(emb)
        t = ag.as_tensor(target)
        diff = t.reshape(t.shape[0], 1, self.target_dim) - means
        z = ag.solve_lower(L, diff)
        comp = -0.5 * (z * z).sum(axis=-1) - log_diag.sum(axis=-1) - 0.5 * self.target_dim * _LOG_2PI
        return ag.logsumexp(log_w + comp, axis=1)

    def mixture_params(self, emb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Numpy (weights, means, Cholesky factors) of the mixture at one embedding row."""
        with ag.no_grad():
            log_w, means, L, _ = self.heads(np.atleast_2d(emb))
        return np.exp(log_w.data[0]), means.data[0], L.data[0]

    def sample_std(self, emb, n, rng):
        w, means, L = self.mixture_params(emb)
        w = w / w.sum()
        which = rng.choice(self.n_components, size=n, p=w)
        eps = rng.standard_normal((n, self.target_dim))
        return means[which] + np.einsum("nij,nj->ni", L[which], eps)


def mdn_log_prob(m: MdnEstimator, theta, c) -> np.ndarray:
    return m.log_prob(theta, c)


def mdn_sample(m: MdnEstimator, c, n: int, rng: np.random.Generator) -> np.ndarray:
    return m.sample(c, n, rng)
