"""Independent reference computations shared by the test modules."""

from __future__ import annotations

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

from simbi.neural import autograd as ag


def central_fd_check(params, loss_fn, h: float = 1e-5) -> float:
    """Worst per-tensor relative error between autograd and central differences.

    The error of each parameter tensor is ``||g_ad - g_fd|| / max(||g_ad||, ||g_fd||)``.
    ``loss_fn()`` must be deterministic (fix any internal randomness).
    """
    g_ad = ag.grad(loss_fn(), params)
    worst = 0.0
    with ag.no_grad():
        for p, g in zip(params, g_ad):
            fd = np.zeros_like(p.data)
            for idx in np.ndindex(p.data.shape):
                old = p.data[idx]
                p.data[idx] = old + h
                up = loss_fn().item()
                p.data[idx] = old - h
                down = loss_fn().item()
                p.data[idx] = old
                fd[idx] = (up - down) / (2 * h)
            scale = max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
            worst = max(worst, float(np.linalg.norm(g - fd) / scale))
    return worst


def gaussian_logpdf(x, mean, cov) -> np.ndarray:
    return stats.multivariate_normal(mean, cov).logpdf(x)


def trapezoid_mass(log_density, lo: float, hi: float, n: int = 4001) -> float:
    grid = np.linspace(lo, hi, n)
    return float(trapezoid(np.exp(log_density(grid[:, None])), grid))


def grid_mass_2d(log_density, lo: float, hi: float, n: int = 401) -> float:
    g = np.linspace(lo, hi, n)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    dens = np.exp(log_density(np.column_stack([xx.ravel(), yy.ravel()]))).reshape(n, n)
    return float(trapezoid(trapezoid(dens, g, axis=1), g))


def conjugate_posterior(prior_mean, prior_cov, lik_cov, xs):
    """Normal-equations solution for ``x_i = theta + eps``, done by dense solves."""
    xs = np.atleast_2d(xs)
    P = np.linalg.inv(prior_cov) + xs.shape[0] * np.linalg.inv(lik_cov)
    b = np.linalg.solve(prior_cov, prior_mean) + np.linalg.solve(lik_cov, xs.sum(0))
    return np.linalg.solve(P, b), np.linalg.inv(P)
