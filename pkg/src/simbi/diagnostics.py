"""Calibration and quality diagnostics for posterior approximations."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import kstwobign

from simbi.distributions import Distribution
from simbi.neural import Mlp, Standardizer, TrainConfig, train
from simbi.neural import autograd as ag
from simbi.seeding import as_seed, derive_seed, rng_for
from simbi.simgym import Simulator

logger = logging.getLogger(__name__)

COVERAGE_LEVELS = np.round(np.concatenate([[0.0], np.arange(1, 20) * 0.05, [1.0]]), 10)
C2ST_TRAIN = TrainConfig(learning_rate=1e-3, batch_size=200, patience=20, max_epochs=500)


class DiagnosticError(RuntimeError):
    pass


# simulation-based calibration -------------------------------------------------------

def discrete_uniform_ks(ranks: np.ndarray, n_levels: int) -> tuple[float, float]:
    """KS statistic and asymptotic p-value of integer ``ranks`` against uniform on ``0..n_levels-1``.

    Both CDFs are step functions jumping at the integers, so the supremum is
    attained at the support points and the statistic is evaluated there only.
    """
    ranks = np.asarray(ranks, dtype=int)
    n = ranks.size
    counts = np.bincount(ranks, minlength=n_levels)[:n_levels]
    ecdf = np.cumsum(counts) / n
    cdf = np.arange(1, n_levels + 1) / n_levels
    d = float(np.max(np.abs(ecdf - cdf)))
    return d, float(kstwobign.sf(np.sqrt(n) * d))


@dataclass
class SbcResult:
    ranks: np.ndarray
    n_posterior_samples: int
    ks_stats: np.ndarray
    pvalues: np.ndarray
    n_skipped: int = 0

    @property
    def n_trials(self) -> int:
        return self.ranks.shape[0] + self.n_skipped

    def passed(self, alpha: float = 0.01) -> bool:
        return bool(np.all(self.pvalues > alpha))


def sbc_ranks(theta_star: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Per-dimension count of posterior samples strictly below the true value."""
    return np.sum(samples < theta_star[None, :], axis=0)


def run_sbc(
    prior: Distribution,
    sim: Simulator,
    posterior_fn: Callable[[np.ndarray, int, np.random.Generator], np.ndarray],
    n_trials: int = 200,
    n_posterior_samples: int = 100,
    rng=0,
) -> SbcResult:
    """Simulation-based calibration.

    ``posterior_fn(x, L, rng)`` must return ``L`` posterior draws at ``x``.
    Trials whose simulation is invalid or whose ``posterior_fn`` raises are
    skipped; more than 20% skipped is an error.
    """
    if n_trials < 50 or n_posterior_samples < 10:
        raise ValueError("SBC needs at least 50 trials and 10 posterior samples per trial")
    seed = as_seed(rng)
    theta = prior.sample(n_trials, rng_for(seed, "sbc", "theta"))
    ranks, skipped = [], 0
    for i in range(n_trials):
        x = sim(theta[i : i + 1], derive_seed(seed, "sbc", "sim", i))
        try:
            if not np.all(np.isfinite(x)):
                raise DiagnosticError("invalid simulation")
            samples = np.asarray(posterior_fn(x[0], n_posterior_samples, rng_for(seed, "sbc", "post", i)))
            if samples.shape != (n_posterior_samples, prior.dim):
                raise DiagnosticError(f"posterior_fn returned shape {samples.shape}")
        except Exception as err:  # noqa: BLE001 - any failing trial is counted, not fatal
            logger.debug("SBC trial %d skipped: %s", i, err)
            skipped += 1
            continue
        ranks.append(sbc_ranks(theta[i], samples))
    if skipped > 0.2 * n_trials:
        raise DiagnosticError(f"{skipped} of {n_trials} SBC trials failed (> 20%)")
    ranks = np.array(ranks, dtype=int).reshape(-1, prior.dim)
    stats = [discrete_uniform_ks(ranks[:, j], n_posterior_samples + 1) for j in range(prior.dim)]
    return SbcResult(ranks, n_posterior_samples, np.array([s[0] for s in stats]), np.array([s[1] for s in stats]), skipped)


# coverage ------------------------------------------------------------------------------

@dataclass
class CoverageCurve:
    levels: np.ndarray
    ecp: np.ndarray
    credibility: np.ndarray
    method: str = ""

    @property
    def n_cases(self) -> int:
        return self.credibility.size

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.ecp - self.levels)))

    def deviation_at(self, mid: tuple[float, float] = (0.2, 0.8)) -> np.ndarray:
        sel = (self.levels >= mid[0]) & (self.levels <= mid[1])
        return self.ecp[sel] - self.levels[sel]


def _curve(score: np.ndarray, levels: np.ndarray, strict: bool, method: str) -> CoverageCurve:
    ecp = np.array([np.mean(score < a) if strict else np.mean(score <= a) for a in levels])
    # ECP(0)=0 and ECP(1)=1 by definition: the empty and the full credible region
    ecp[levels <= 0.0] = 0.0
    ecp[levels >= 1.0] = 1.0
    return CoverageCurve(np.asarray(levels, dtype=float), ecp, score, method)


def _check_samples(theta_star: np.ndarray, samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    theta_star = np.atleast_2d(np.asarray(theta_star, dtype=np.float64))
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples[..., None]
    if samples.ndim != 3 or samples.shape[0] != theta_star.shape[0] or samples.shape[2] != theta_star.shape[1]:
        raise ValueError(f"posterior samples must be (N, M, d) matching theta_star {theta_star.shape}")
    if np.any(np.ptp(samples, axis=1).max(axis=1) == 0):
        raise DiagnosticError("degenerate posterior: all samples of a case are identical")
    return theta_star, samples


def run_tarp(
    theta_star,
    posterior_samples,
    rng: np.random.Generator,
    reference: Distribution | str = "uniform-over-sample-box",
    levels: np.ndarray = COVERAGE_LEVELS,
) -> CoverageCurve:
    """Expected coverage via random reference points (TARP).

    ``f_i`` is the fraction of case ``i``'s samples closer to a reference
    point than the true parameter; ``ECP(alpha) = mean(f_i < alpha)``. The
    default reference is uniform over each case's sample bounding box.
    """
    theta_star, samples = _check_samples(theta_star, posterior_samples)
    n = theta_star.shape[0]
    if isinstance(reference, Distribution):
        refs = reference.sample(n, rng)
    elif reference == "uniform-over-sample-box":
        lo, hi = samples.min(axis=1), samples.max(axis=1)
        refs = lo + (hi - lo) * rng.random(lo.shape)
    else:
        raise ValueError(f"unknown TARP reference {reference!r}")
    d_samples = np.linalg.norm(samples - refs[:, None, :], axis=2)
    d_true = np.linalg.norm(theta_star - refs, axis=1)
    f = np.mean(d_samples < d_true[:, None], axis=1)
    return _curve(f, np.asarray(levels, dtype=float), strict=True, method="tarp")


def expected_coverage_rank(
    theta_star,
    log_q: Callable[[np.ndarray, np.ndarray], np.ndarray],
    posterior_samples,
    x_o,
    levels: np.ndarray = COVERAGE_LEVELS,
) -> CoverageCurve:
    """Density-rank expected coverage for evaluable posteriors.

    Credibility of ``theta*`` is the fraction of samples with higher density;
    ``ECP(alpha) = mean(credibility <= alpha)``.
    """
    theta_star, samples = _check_samples(theta_star, posterior_samples)
    x_o = np.atleast_2d(np.asarray(x_o, dtype=np.float64))
    cred = np.empty(theta_star.shape[0])
    for i in range(theta_star.shape[0]):
        lq_s = np.asarray(log_q(samples[i], x_o[i]))
        lq_t = float(np.asarray(log_q(theta_star[i : i + 1], x_o[i])).reshape(-1)[0])
        cred[i] = np.mean(lq_s > lq_t)
    return _curve(cred, np.asarray(levels, dtype=float), strict=False, method="density-rank")


# classifier two-sample test -----------------------------------------------------------------

@dataclass
class C2stResult:
    accuracy: float
    fold_accuracies: list[float]
    folds: int
    n_p: int
    n_q: int


def _bce_loss(model, batch, rng):
    logit = model(batch["x"]).reshape(-1)
    y = batch["y"]
    return ag.mean(ag.softplus(logit) - logit * y)


def c2st(
    samples_p,
    samples_q,
    folds: int = 5,
    rng=0,
    train_config: TrainConfig = C2ST_TRAIN,
    hidden: tuple[int, ...] = (50, 50),
    min_samples: int = 200,
) -> C2stResult:
    """Cross-validated accuracy of an Mlp separating ``samples_p`` from ``samples_q``.

    0.5 means indistinguishable, 1.0 means perfectly separable.
    """
    p = np.atleast_2d(np.asarray(samples_p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(samples_q, dtype=np.float64))
    if p.shape[1] != q.shape[1]:
        raise ValueError(f"dimension mismatch: {p.shape[1]} vs {q.shape[1]}")
    if p.shape[0] != q.shape[0] or p.shape[0] < min_samples:
        raise ValueError(f"need equal sample counts of at least {min_samples}, got {p.shape[0]} and {q.shape[0]}")
    if folds < 2:
        raise ValueError("folds must be at least 2")
    seed = as_seed(rng)
    data = np.concatenate([p, q])
    data = Standardizer.fit(data).standardize(data)
    labels = np.concatenate([np.zeros(len(p)), np.ones(len(q))])
    order = rng_for(seed, "c2st", "folds").permutation(len(data))
    chunks = np.array_split(order, folds)
    accs = []
    for k in range(folds):
        test = chunks[k]
        tr = np.concatenate([c for j, c in enumerate(chunks) if j != k])
        model = Mlp([data.shape[1], *hidden, 1], "relu", rng_for(seed, "c2st", "init", k))
        cfg = TrainConfig(**{**train_config.to_dict(), "seed": derive_seed(seed, "c2st", "train", k)})
        train(model, {"x": data[tr], "y": labels[tr]}, _bce_loss, cfg)
        with ag.no_grad():
            pred = model(data[test]).data.reshape(-1) > 0
        accs.append(float(np.mean(pred == labels[test].astype(bool))))
    return C2stResult(float(np.mean(accs)), accs, folds, len(p), len(q))


# reports ------------------------------------------------------------------------------------

@dataclass
class DiagnosticReport:
    method: str
    verdict: str
    summary: dict
    rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"method": self.method, "verdict": self.verdict, **self.summary}

    def save(self, directory: str | Path, stem: str = "report") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        jpath, cpath = directory / f"{stem}.json", directory / f"{stem}.csv"
        jpath.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        with cpath.open("w", newline="") as fh:
            if self.rows:
                writer = csv.DictWriter(fh, fieldnames=list(self.rows[0]))
                writer.writeheader()
                writer.writerows(self.rows)
        return jpath, cpath


def sbc_report(res: SbcResult, alpha: float = 0.01) -> DiagnosticReport:
    rows = [{f"rank_{j}": int(r) for j, r in enumerate(row)} for row in res.ranks]
    summary = {
        "pvalues": res.pvalues.tolist(),
        "ks_stats": res.ks_stats.tolist(),
        "n_posterior_samples": res.n_posterior_samples,
        "n_completed": int(res.ranks.shape[0]),
        "n_skipped": res.n_skipped,
        "alpha": alpha,
    }
    return DiagnosticReport("sbc", "pass" if res.passed(alpha) else "fail", summary, rows)


def coverage_report(curve: CoverageCurve, max_deviation: float = 0.05) -> DiagnosticReport:
    rows = [{"level": float(a), "ecp": float(e)} for a, e in zip(curve.levels, curve.ecp)]
    summary = {
        "levels": curve.levels.tolist(),
        "ecp": curve.ecp.tolist(),
        "max_deviation": curve.max_deviation,
        "threshold": max_deviation,
        "n_cases": curve.n_cases,
    }
    return DiagnosticReport(curve.method or "coverage", "pass" if curve.max_deviation <= max_deviation else "fail", summary, rows)


def c2st_report(res: C2stResult, max_accuracy: float = 0.6) -> DiagnosticReport:
    rows = [{"fold": k, "accuracy": a} for k, a in enumerate(res.fold_accuracies)]
    summary = {"accuracy": res.accuracy, "folds": res.folds, "n_p": res.n_p, "n_q": res.n_q, "threshold": max_accuracy}
    return DiagnosticReport("c2st", "pass" if res.accuracy <= max_accuracy else "fail", summary, rows)
