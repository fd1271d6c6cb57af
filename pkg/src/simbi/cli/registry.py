"""Built-in simulators available to the command line."""

from __future__ import annotations

import math

import numpy as np

from simbi.distributions import Distribution, GaussianDiag, GaussianFull, linear_gaussian_posterior
from simbi.simgym import Simulator


class UnknownSimulator(KeyError):
    pass


def _identity(dim: int, failure_rate: float = 0.0) -> Simulator:
    def fn(theta, seed):
        x = theta.copy()
        if failure_rate and np.random.default_rng(seed).random() < failure_rate:
            x[:] = np.nan
        return x

    return Simulator(fn, dim, dim, "identity")


def _linear_gaussian(dim: int, sigma: float = math.sqrt(0.1), shift: float = 0.0, failure_rate: float = 0.0) -> Simulator:
    def fn(theta, seed):
        rng = np.random.default_rng(seed)
        x = theta + shift + sigma * rng.standard_normal(theta.shape)
        if failure_rate and rng.random() < failure_rate:
            x[:] = np.nan
        return x

    return Simulator(fn, dim, dim, "linear-gaussian")


def _two_moons(dim: int, failure_rate: float = 0.0) -> Simulator:
    if dim != 2:
        raise ValueError("two-moons needs a 2-d prior")

    def fn(theta, seed):
        rng = np.random.default_rng(seed)
        n = theta.shape[0]
        a = rng.uniform(-math.pi / 2, math.pi / 2, n)
        r = 0.1 + 0.01 * rng.standard_normal(n)
        p = np.stack([r * np.cos(a) + 0.25, r * np.sin(a)], axis=1)
        t0, t1 = theta[:, 0], theta[:, 1]
        x = p + np.stack([-np.abs(t0 + t1) / math.sqrt(2), (-t0 + t1) / math.sqrt(2)], axis=1)
        if failure_rate and rng.random() < failure_rate:
            x[:] = np.nan
        return x

    return Simulator(fn, 2, 2, "two-moons")


REGISTRY = {"identity": _identity, "linear-gaussian": _linear_gaussian, "two-moons": _two_moons}


def make_simulator(section: dict, prior: Distribution) -> Simulator:
    opts = dict(section)
    name = opts.pop("name", "linear-gaussian")
    if name not in REGISTRY:
        raise UnknownSimulator(f"unknown simulator {name!r}; registry: {sorted(REGISTRY)}")
    return REGISTRY[name](prior.dim, **opts)


def oracle_posterior(section: dict, prior: Distribution, x_o) -> GaussianFull:
    """Analytic posterior for the linear-Gaussian simulator under a Gaussian prior."""
    if section.get("name", "linear-gaussian") != "linear-gaussian":
        raise ValueError("an analytic posterior exists only for the linear-gaussian simulator")
    if not isinstance(prior, (GaussianDiag, GaussianFull)):
        raise ValueError("the analytic posterior needs a Gaussian prior")
    sigma = float(section.get("sigma", math.sqrt(0.1)))
    shift = float(section.get("shift", 0.0))
    x = np.atleast_2d(np.asarray(x_o, dtype=np.float64)) - shift
    return linear_gaussian_posterior(prior, sigma**2 * np.eye(prior.dim), x)
