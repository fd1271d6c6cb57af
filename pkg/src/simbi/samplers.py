"""Samplers for unnormalized log-densities.

All targets are vectorized: ``fn(theta[m, d]) -> log_density[m]``. Random-walk
Metropolis–Hastings advances every chain in lockstep with a single target call
per step.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from simbi.distributions import Distribution, GaussianDiag, UniformBox

TARGET_ACCEPTANCE = 0.234


class SamplerError(RuntimeError):
    pass


@dataclass
class LogDensityTarget:
    fn: Callable[[np.ndarray], np.ndarray]
    dim: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(theta)
        out = np.asarray(self.fn(theta), dtype=np.float64).reshape(theta.shape[0])
        out = np.where(np.isnan(out), -np.inf, out)
        if self.lower is not None:
            out = np.where(np.all(theta >= self.lower, axis=1), out, -np.inf)
        if self.upper is not None:
            out = np.where(np.all(theta < self.upper, axis=1), out, -np.inf)
        return out


def as_target(t, dim: int | None = None) -> LogDensityTarget:
    if isinstance(t, LogDensityTarget):
        return t
    if dim is None:
        raise ValueError("dim is required when passing a bare callable")
    return LogDensityTarget(t, dim)


@dataclass
class McmcConfig:
    chains: int = 20
    warmup: int = 200
    thin: int = 10
    scale: float = 0.5
    init: str = "resample"  # "resample" (best-of-1024 resampling) or "prior"
    init_draws: int = 1024
    adapt: bool = True
    slice_width: float = 1.0
    slice_max_steps: int = 50

    def __post_init__(self):
        if self.chains < 1 or self.warmup < 0 or self.thin < 1:
            raise ValueError("chains and thin must be >= 1, warmup >= 0")
        if not self.scale > 0 or not self.slice_width > 0:
            raise ValueError("proposal scale and slice width must be positive")
        if self.init not in ("resample", "prior"):
            raise ValueError("init must be 'resample' or 'prior'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class McmcDiagnostics:
    acceptance: np.ndarray
    rhat: np.ndarray
    scale_trace: np.ndarray
    chains: np.ndarray = field(repr=False)
    seed: int | None = None
    config: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.acceptance))

    def to_dict(self) -> dict:
        return {
            "acceptance_per_chain": self.acceptance.tolist(),
            "acceptance_rate": self.acceptance_rate,
            "rhat": self.rhat.tolist(),
            "final_scale": float(self.scale_trace[-1]) if self.scale_trace.size else None,
            "seed": self.seed,
            "config": self.config,
        }


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-R-hat per dimension for draws shaped ``(n_chains, n_draws, dim)``."""
    chains = np.asarray(chains, dtype=np.float64)
    if chains.ndim == 2:
        chains = chains[..., None]
    half = chains.shape[1] // 2
    if half < 2:
        return np.full(chains.shape[2], np.nan)
    parts = np.concatenate([chains[:, :half], chains[:, -half:]], axis=0)
    n = parts.shape[1]
    chain_means = parts.mean(axis=1)
    w = parts.var(axis=1, ddof=1).mean(axis=0)
    b = n * chain_means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / w)
    return np.where(w > 0, rhat, 1.0)


def effective_sample_size(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=np.float64)
    return float(w.sum() ** 2 / np.sum(w * w))


def _init_points(t: LogDensityTarget, cfg: McmcConfig, rng, init_dist: Distribution | None) -> np.ndarray:
    if init_dist is None:
        if t.lower is not None and t.upper is not None:
            init_dist = UniformBox(t.lower, t.upper)
        else:
            init_dist = GaussianDiag(np.zeros(t.dim), np.ones(t.dim))
    if cfg.init == "prior":
        pts = init_dist.sample(cfg.chains, rng)
        lp = t(pts)
        if not np.any(np.isfinite(lp)):
            raise SamplerError("every initial point has zero target density")
        # chains starting outside the support restart from a valid one
        good = np.flatnonzero(np.isfinite(lp))
        bad = ~np.isfinite(lp)
        pts[bad] = pts[rng.choice(good, size=int(bad.sum()))]
        return pts
    pool = init_dist.sample(cfg.init_draws, rng)
    lp = t(pool)
    if not np.any(np.isfinite(lp)):
        raise SamplerError(f"all {cfg.init_draws} initialization draws have zero target density")
    p = np.exp(lp - logsumexp(lp))
    return pool[rng.choice(pool.shape[0], size=cfg.chains, p=p / p.sum())]


def _pool(chains: np.ndarray, n: int) -> np.ndarray:
    """Round-robin pooling: draw k of every chain, then draw k+1, ..."""
    c, m, d = chains.shape
    return chains.transpose(1, 0, 2).reshape(c * m, d)[:n]


def mh_sample(
    t,
    cfg: McmcConfig | None = None,
    n: int = 1000,
    rng: np.random.Generator | None = None,
    init_dist: Distribution | None = None,
    proposal_std: np.ndarray | None = None,
) -> tuple[np.ndarray, McmcDiagnostics]:
    """Gaussian random-walk Metropolis–Hastings with lockstep chains.

    The proposal standard deviation is ``scale * proposal_std`` (``proposal_std``
    defaults to the spread of the initialization pool). During warmup ``scale``
    follows a Robbins–Monro recursion toward 23.4% acceptance; it is frozen
    afterwards.
    """
    cfg = cfg or McmcConfig()
    rng = rng if rng is not None else np.random.default_rng()
    t = as_target(t)
    if n < 1:
        raise ValueError("n must be at least 1")
    x = _init_points(t, cfg, rng, init_dist)
    if proposal_std is None:
        spread = x.std(axis=0) if cfg.chains > 1 else np.zeros(t.dim)
        proposal_std = np.where(spread > 1e-8, spread, 1.0)
    proposal_std = np.broadcast_to(np.asarray(proposal_std, dtype=np.float64), (t.dim,))
    lp = t(x)
    log_scale = math.log(cfg.scale)
    per_chain = math.ceil(n / cfg.chains)
    total = cfg.warmup + per_chain * cfg.thin
    kept = np.empty((cfg.chains, per_chain, t.dim))
    accepted = np.zeros(cfg.chains)
    scale_trace = np.empty(total)

    for step in range(total):
        scale = math.exp(log_scale)
        prop = x + scale * proposal_std * rng.standard_normal(x.shape)
        lp_prop = t(prop)
        accept = np.log(rng.random(cfg.chains)) < lp_prop - lp
        x = np.where(accept[:, None], prop, x)
        lp = np.where(accept, lp_prop, lp)
        scale_trace[step] = scale
        if step < cfg.warmup:
            if cfg.adapt:
                log_scale += (accept.mean() - TARGET_ACCEPTANCE) / (step + 1) ** 0.6
        else:
            accepted += accept
            k = step - cfg.warmup
            if (k + 1) % cfg.thin == 0:
                kept[:, k // cfg.thin] = x

    diag = McmcDiagnostics(
        acceptance=accepted / (per_chain * cfg.thin),
        rhat=split_rhat(kept),
        scale_trace=scale_trace,
        chains=kept,
        config=cfg.to_dict(),
    )
    return _pool(kept, n), diag


def _slice_axis(t: LogDensityTarget, x: np.ndarray, lp: float, axis: int, w: float, max_steps: int, rng) -> tuple[np.ndarray, float]:
    log_y = lp + math.log(rng.random())
    left = x[axis] - w * rng.random()
    right = left + w
    j = int(math.floor(max_steps * rng.random()))
    k = max_steps - 1 - j
    probe = x.copy()

    def f(v):
        probe[axis] = v
        return float(t(probe[None, :])[0])

    while j > 0 and f(left) > log_y:
        left -= w
        j -= 1
    while k > 0 and f(right) > log_y:
        right += w
        k -= 1
    while True:
        v = left + (right - left) * rng.random()
        lv = f(v)
        if lv > log_y:
            out = x.copy()
            out[axis] = v
            return out, lv
        if v < x[axis]:
            left = v
        else:
            right = v
        if right - left < 1e-300:
            return x, lp


def slice_sample(
    t,
    cfg: McmcConfig | None = None,
    n: int = 1000,
    rng: np.random.Generator | None = None,
    init_dist: Distribution | None = None,
) -> tuple[np.ndarray, McmcDiagnostics]:
    """Axis-wise slice sampling with stepping-out (width ``cfg.slice_width``)."""
    cfg = cfg or McmcConfig()
    rng = rng if rng is not None else np.random.default_rng()
    t = as_target(t)
    if n < 1:
        raise ValueError("n must be at least 1")
    starts = _init_points(t, cfg, rng, init_dist)
    per_chain = math.ceil(n / cfg.chains)
    kept = np.empty((cfg.chains, per_chain, t.dim))
    for c in range(cfg.chains):
        x = starts[c].copy()
        lp = float(t(x[None, :])[0])
        for step in range(cfg.warmup + per_chain * cfg.thin):
            for axis in range(t.dim):
                x, lp = _slice_axis(t, x, lp, axis, cfg.slice_width, cfg.slice_max_steps, rng)
            k = step - cfg.warmup
            if k >= 0 and (k + 1) % cfg.thin == 0:
                kept[c, k // cfg.thin] = x
    diag = McmcDiagnostics(
        acceptance=np.ones(cfg.chains),
        rhat=split_rhat(kept),
        scale_trace=np.full(1, cfg.slice_width),
        chains=kept,
        config=cfg.to_dict(),
    )
    return _pool(kept, n), diag


def rejection_sample(
    t,
    proposal: Distribution,
    log_m: float,
    n: int,
    rng: np.random.Generator,
    max_proposals: int = 10**7,
    batch_size: int | None = None,
) -> tuple[np.ndarray, float]:
    """Accept ``theta ~ proposal`` with probability ``exp(log p(theta) - log_m - log q(theta))``."""
    t = as_target(t, proposal.dim)
    batch_size = batch_size or max(1000, 2 * n)
    out: list[np.ndarray] = []
    n_acc = n_prop = 0
    while n_acc < n:
        cand = proposal.sample(batch_size, rng)
        log_ratio = t(cand) - log_m - proposal.log_prob(cand)
        acc = np.log(rng.random(batch_size)) < log_ratio
        out.append(cand[acc])
        n_acc += int(acc.sum())
        n_prop += batch_size
        if n_prop >= max_proposals and n_acc / n_prop < 1e-6:
            raise SamplerError(f"rejection acceptance rate {n_acc / n_prop:.2e} after {n_prop} proposals")
    return np.concatenate(out)[:n], n_acc / n_prop


@dataclass
class ImportanceResult:
    samples: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray
    ess: float

    def mean(self) -> np.ndarray:
        return self.weights @ self.samples

    def resample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.samples[rng.choice(len(self.weights), size=n, p=self.weights)]


def normalize_log_weights(log_w: np.ndarray) -> tuple[np.ndarray, float]:
    log_w = np.where(np.isnan(log_w), -np.inf, log_w)
    if not np.any(np.isfinite(log_w)):
        raise SamplerError("all importance weights are zero")
    w = np.exp(log_w - logsumexp(log_w))
    w = w / w.sum()
    return w, effective_sample_size(w)


def importance_sample(t, proposal: Distribution, n: int, rng: np.random.Generator) -> ImportanceResult:
    """Self-normalized importance sampling of ``t`` with draws from ``proposal``."""
    t = as_target(t, proposal.dim)
    samples = proposal.sample(n, rng)
    log_w = t(samples) - proposal.log_prob(samples)
    w, ess = normalize_log_weights(log_w)
    return ImportanceResult(samples, w, log_w, ess)
