"""Priors, proposals and analytic reference distributions.

Every distribution is immutable after construction, validates its parameters
in ``__init__`` and works on ``(n, dim)`` float64 arrays. Discrete coordinates
(``categorical``) are integer-valued reals so that mixed discrete/continuous
parameter vectors live in a single array.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

LOG_2PI = float(np.log(2.0 * np.pi))


class DistributionError(ValueError):
    """Invalid distribution parameters or mismatched dimensions."""


def _as_rows(theta, dim: int) -> tuple[np.ndarray, bool]:
    theta = np.asarray(theta, dtype=np.float64)
    single = theta.ndim == 1
    rows = theta[None, :] if single else theta
    if rows.ndim != 2 or rows.shape[1] != dim:
        raise DistributionError(f"expected parameter vectors of length {dim}, got shape {theta.shape}")
    return rows, single


class Distribution:
    kind: str = ""
    dim: int

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if int(n) < 1:
            raise DistributionError("n must be at least 1")
        return self._sample(int(n), rng)

    def log_prob(self, theta):
        """Log-density (log-mass on discrete coordinates); -inf outside support.

        Accepts a single vector (returns a float) or an ``(n, dim)`` matrix.
        """
        rows, single = _as_rows(theta, self.dim)
        out = self._log_prob(rows)
        return float(out[0]) if single else out

    def _sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _log_prob(self, rows: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "params": self.params()}

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim})"


class UniformBox(Distribution):
    """Uniform on the half-open box ``[lower, upper)``."""

    kind = "uniform-box"

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
        upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise DistributionError("lower and upper must be vectors of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper)) and np.all(lower < upper)):
            raise DistributionError("uniform-box needs finite bounds with lower < upper")
        self.lower, self.upper = lower, upper
        self.dim = lower.size
        self._log_volume = float(np.sum(np.log(upper - lower)))

    def _sample(self, n, rng):
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def _log_prob(self, rows):
        inside = np.all((rows >= self.lower) & (rows < self.upper), axis=1)
        return np.where(inside, -self._log_volume, -np.inf)

    def contains(self, rows) -> np.ndarray:
        rows = np.atleast_2d(rows)
        return np.all((rows >= self.lower) & (rows < self.upper), axis=1)

    def params(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


class GaussianDiag(Distribution):
    kind = "gaussian-diag"

    def __init__(self, mean, variance):
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        variance = np.broadcast_to(np.asarray(variance, dtype=np.float64), mean.shape).copy()
        if mean.ndim != 1 or not np.all(np.isfinite(mean)):
            raise DistributionError("mean must be a finite vector")
        if not np.all(np.isfinite(variance) & (variance > 0)):
            raise DistributionError("variances must be finite and positive")
        self.mean, self.variance = mean, variance
        self.dim = mean.size

    @property
    def covariance(self) -> np.ndarray:
        return np.diag(self.variance)

    def _sample(self, n, rng):
        return self.mean + np.sqrt(self.variance) * rng.standard_normal((n, self.dim))

    def _log_prob(self, rows):
        z2 = (rows - self.mean) ** 2 / self.variance
        return -0.5 * (np.sum(z2, axis=1) + np.sum(np.log(self.variance)) + self.dim * LOG_2PI)

    def params(self):
        return {"mean": self.mean.tolist(), "variance": self.variance.tolist()}


class GaussianFull(Distribution):
    """Multivariate normal stored through the lower Cholesky factor of its covariance."""

    kind = "gaussian-full"

    def __init__(self, mean, covariance=None, scale_tril=None):
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        d = mean.size
        if (covariance is None) == (scale_tril is None):
            raise DistributionError("give exactly one of covariance or scale_tril")
        if covariance is not None:
            cov = np.asarray(covariance, dtype=np.float64)
            if cov.shape != (d, d) or not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
                raise DistributionError("covariance must be a symmetric (dim x dim) matrix")
            try:
                tril = np.linalg.cholesky(0.5 * (cov + cov.T))
            except np.linalg.LinAlgError as err:
                raise DistributionError("covariance is not positive definite") from err
        else:
            tril = np.asarray(scale_tril, dtype=np.float64)
            if tril.shape != (d, d) or np.any(np.triu(tril, 1) != 0):
                raise DistributionError("scale_tril must be lower triangular (dim x dim)")
        if not (np.all(np.isfinite(tril)) and np.all(np.diag(tril) > 0) and np.all(np.isfinite(mean))):
            raise DistributionError("Cholesky factor needs a strictly positive diagonal")
        self.mean, self.scale_tril = mean, tril
        self.dim = d
        self._half_logdet = float(np.sum(np.log(np.diag(tril))))

    @property
    def covariance(self) -> np.ndarray:
        return self.scale_tril @ self.scale_tril.T

    def _sample(self, n, rng):
        return self.mean + rng.standard_normal((n, self.dim)) @ self.scale_tril.T

    def _log_prob(self, rows):
        z = solve_triangular(self.scale_tril, (rows - self.mean).T, lower=True).T
        return -0.5 * (np.sum(z * z, axis=1) + self.dim * LOG_2PI) - self._half_logdet

    def params(self):
        return {"mean": self.mean.tolist(), "scale_tril": self.scale_tril.tolist()}


class MixtureOfGaussians(Distribution):
    kind = "mixture-of-gaussians"

    def __init__(self, weights, components: Sequence[Distribution]):
        weights = np.asarray(weights, dtype=np.float64)
        _check_probs(weights, "mixture weights")
        components = list(components)
        if len(components) != weights.size or not components:
            raise DistributionError("need one component per mixture weight")
        if any(not isinstance(c, (GaussianDiag, GaussianFull)) for c in components):
            raise DistributionError("mixture components must be Gaussian")
        if len({c.dim for c in components}) != 1:
            raise DistributionError("mixture components must share a dimension")
        self.weights, self.components = weights, components
        self.dim = components[0].dim
        with np.errstate(divide="ignore"):
            self._log_w = np.log(weights)

    def _sample(self, n, rng):
        which = rng.choice(len(self.components), size=n, p=self.weights)
        draws = np.stack([c._sample(n, rng) for c in self.components])
        return draws[which, np.arange(n)]

    def _log_prob(self, rows):
        comp = np.stack([c._log_prob(rows) for c in self.components], axis=1)
        return logsumexp(comp + self._log_w, axis=1)

    def params(self):
        return {"weights": self.weights.tolist(), "components": [c.to_dict() for c in self.components]}


class Categorical(Distribution):
    """One discrete coordinate taking values ``0 .. K-1``."""

    kind = "categorical"
    dim = 1

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=np.float64)
        _check_probs(probs, "categorical probabilities")
        self.probs = probs
        with np.errstate(divide="ignore"):
            self._log_p = np.log(probs)

    def _sample(self, n, rng):
        return rng.choice(self.probs.size, size=(n, 1), p=self.probs).astype(np.float64)

    def _log_prob(self, rows):
        v = rows[:, 0]
        ok = (v == np.round(v)) & (v >= 0) & (v < self.probs.size)
        idx = np.where(ok, v, 0).astype(int)
        return np.where(ok, self._log_p[idx], -np.inf)

    def params(self):
        return {"probs": self.probs.tolist()}


class IndependentProduct(Distribution):
    """Concatenation of independent blocks, e.g. continuous and discrete parameters."""

    kind = "independent-product"

    def __init__(self, components: Sequence[Distribution]):
        components = list(components)
        if not components:
            raise DistributionError("independent-product needs at least one component")
        self.components = components
        self.dims = [c.dim for c in components]
        self.dim = int(sum(self.dims))
        self._splits = np.cumsum(self.dims)[:-1]

    def _sample(self, n, rng):
        return np.concatenate([c._sample(n, rng) for c in self.components], axis=1)

    def _log_prob(self, rows):
        blocks = np.split(rows, self._splits, axis=1)
        return sum(c._log_prob(b) for c, b in zip(self.components, blocks))

    def params(self):
        return {"components": [c.to_dict() for c in self.components]}


def _check_probs(p: np.ndarray, what: str) -> None:
    if p.ndim != 1 or p.size == 0:
        raise DistributionError(f"{what} must be a non-empty vector")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise DistributionError(f"{what} must be nonnegative and sum to 1")


def sample(d: Distribution, n: int, rng: np.random.Generator) -> np.ndarray:
    return d.sample(n, rng)


def log_prob(d: Distribution, theta):
    return d.log_prob(theta)


def is_gaussian(d: Distribution) -> bool:
    return isinstance(d, (GaussianDiag, GaussianFull))


def linear_gaussian_posterior(prior: Distribution, likelihood_cov, x_o) -> GaussianFull:
    """Exact posterior for ``x = theta + eps``, ``eps ~ N(0, likelihood_cov)``.

    ``x_o`` may be one vector or several i.i.d. rows; each row adds one copy
    of the likelihood precision.
    """
    if not is_gaussian(prior):
        raise DistributionError("conjugate update needs a Gaussian prior")
    cov_l = np.atleast_2d(np.asarray(likelihood_cov, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x_o, dtype=np.float64))
    d = prior.dim
    if cov_l.shape != (d, d) or x.shape[1] != d:
        raise DistributionError("dimension mismatch between prior, likelihood covariance and x_o")
    try:
        chol_l = np.linalg.cholesky(cov_l)
    except np.linalg.LinAlgError as err:
        raise DistributionError("likelihood covariance is not positive definite") from err
    if not np.allclose(cov_l, cov_l.T):
        raise DistributionError("likelihood covariance must be symmetric")
    eye = np.eye(d)
    prec_l = np.linalg.solve(chol_l.T, np.linalg.solve(chol_l, eye))
    prec_p = np.linalg.inv(prior.covariance)
    prec_post = prec_p + x.shape[0] * prec_l
    prec_post = 0.5 * (prec_post + prec_post.T)
    rhs = prec_p @ prior.mean + prec_l @ x.sum(axis=0)
    cov_post = np.linalg.inv(prec_post)
    mean_post = np.linalg.solve(prec_post, rhs)
    return GaussianFull(mean_post, covariance=0.5 * (cov_post + cov_post.T))


_KINDS = {
    "uniform-box": lambda p: UniformBox(p["lower"], p["upper"]),
    "gaussian-diag": lambda p: GaussianDiag(p["mean"], p["variance"]),
    "gaussian-full": lambda p: GaussianFull(p["mean"], covariance=p.get("covariance"), scale_tril=p.get("scale_tril")),
    "mixture-of-gaussians": lambda p: MixtureOfGaussians(p["weights"], [from_dict(c) for c in p["components"]]),
    "categorical": lambda p: Categorical(p["probs"]),
    "independent-product": lambda p: IndependentProduct([from_dict(c) for c in p["components"]]),
}


def from_dict(spec: dict) -> Distribution:
    """Build a distribution from ``{"kind": ..., "dim": n, "params": {...}}``."""
    kind = spec.get("kind")
    if kind not in _KINDS:
        raise DistributionError(f"unknown distribution kind {kind!r}; known: {sorted(_KINDS)}")
    try:
        dist = _KINDS[kind](spec.get("params", {}))
    except KeyError as err:
        raise DistributionError(f"{kind} is missing parameter {err}") from err
    if "dim" in spec and int(spec["dim"]) != dist.dim:
        raise DistributionError(f"declared dim {spec['dim']} does not match parameters (dim {dist.dim})")
    return dist
