"""Neural posterior, likelihood and ratio estimation.

Typical amortized use::

    method = InferenceMethod("NPE", prior)
    batch = filter_valid(simulate_for_sbi(prior, sim, 10_000, rng=0))
    est = train_amortized(method, batch)
    posterior = build_posterior(method, est, x_o)
    samples = posterior.sample(1000, np.random.default_rng(1))
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from simbi.distributions import Distribution, UniformBox
from simbi.estimators import EmbeddingNet, MafEstimator, MdnEstimator, RatioClassifier
from simbi.estimators.base import ConditionalEstimator, DensityEstimator
from simbi.neural import TrainConfig, TrainResult, train
from simbi.samplers import (
    ImportanceResult,
    LogDensityTarget,
    McmcConfig,
    McmcDiagnostics,
    SamplerError,
    importance_sample,
    mh_sample,
    normalize_log_weights,
    rejection_sample,
    slice_sample,
)
from simbi.seeding import as_seed, derive_seed, rng_for
from simbi.simgym import SimulationBatch, Simulator, append, filter_valid, simulate_for_sbi, simulate_theta

logger = logging.getLogger(__name__)

METHODS = ("NPE", "NLE", "NRE")
NPE_REJECTION_CAP = 10**6
TRUNCATION_QUANTILE = 5e-4


class InferenceError(RuntimeError):
    pass


@dataclass
class EstimatorConfig:
    """Architecture choices. ``kind`` defaults to ``mdn`` for NPE/NLE and is
    always ``ratio-classifier`` for NRE."""

    kind: str = "mdn"
    n_components: int = 10
    n_layers: int = 5
    hidden: tuple[int, ...] = (50, 50)
    activation: str = "relu"
    embedding: dict | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.kind not in ("mdn", "maf", "ratio-classifier"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class InferenceMethod:
    kind: str
    prior: Distribution
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.kind!r}")
        if self.kind == "NRE" and self.estimator.kind != "ratio-classifier":
            self.estimator = replace(self.estimator, kind="ratio-classifier")
        if self.kind != "NRE" and self.estimator.kind == "ratio-classifier":
            raise ValueError(f"{self.kind} needs a density estimator (mdn or maf)")


def build_estimator(m: InferenceMethod, dim_theta: int, dim_x: int, seed: int) -> ConditionalEstimator:
    """Fresh, untrained estimator for method ``m`` (weights initialised from ``seed``)."""
    rng = rng_for(seed, "init")
    cfg = m.estimator
    cond_dim = dim_theta if m.kind == "NLE" else dim_x
    emb = None
    if cfg.embedding:
        emb = EmbeddingNet.from_config({"input_dim": cond_dim, **cfg.embedding}, rng=rng)
    if m.kind == "NRE":
        return RatioClassifier(dim_theta, dim_x, cfg.hidden, cfg.activation, emb, rng)
    target_dim = dim_x if m.kind == "NLE" else dim_theta
    if cfg.kind == "maf":
        return MafEstimator(target_dim, cond_dim, cfg.n_layers, cfg.hidden, cfg.activation, emb, rng)
    return MdnEstimator(target_dim, cond_dim, cfg.n_components, cfg.hidden, cfg.activation, emb, rng)


def _density_loss(model, batch, rng):
    return model.loss(batch)


def _ratio_loss(model, batch, rng):
    return model.loss(batch, rng)


def train_amortized(
    m: InferenceMethod, batch: SimulationBatch, estimator: ConditionalEstimator | None = None
) -> ConditionalEstimator:
    """Train the method's estimator on a simulation batch (invalid rows are dropped).

    With ``estimator`` given, training continues from its current weights and
    standardizers instead of starting from a fresh network.
    The fitted :class:`~simbi.neural.TrainResult` is attached as ``est.train_result``.
    """
    if batch.dim_theta != m.prior.dim:
        raise ValueError(f"batch theta dim {batch.dim_theta} does not match prior dim {m.prior.dim}")
    if batch.n_invalid:
        batch = filter_valid(batch)
    if len(batch) < 10:
        raise ValueError(f"need at least 10 valid simulations, got {len(batch)}")
    fresh = estimator is None
    est = build_estimator(m, batch.dim_theta, batch.dim_x, m.train.seed) if fresh else estimator
    if m.kind == "NLE":
        target, cond = batch.x, batch.theta
    else:
        target, cond = batch.theta, batch.x
    if fresh:
        est.fit_standardizers(target, cond)
    if m.kind == "NRE":
        data, loss = {"theta": batch.theta, "x": batch.x}, _ratio_loss
    else:
        data, loss = {"target": target, "cond": cond}, _density_loss
    est.train_result = train(est, data, loss, m.train)
    return est


@dataclass
class Posterior:
    """Samples (and for NPE evaluates) ``p(theta | x_o)`` from a trained estimator.

    ``x_o`` holds one or more i.i.d. observations as rows. Strategies:
    ``direct`` (NPE only, rejection against the prior support), ``mcmc``
    (random-walk MH), ``slice``, ``rejection`` (prior proposal) and
    ``importance`` (prior proposal, sampling-importance-resampling).
    """

    kind: str
    estimator: ConditionalEstimator
    prior: Distribution
    x_o: np.ndarray
    strategy: str
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    diagnostics: dict = field(default_factory=dict)

    # target density ---------------------------------------------------------
    def _prior_lp(self, theta: np.ndarray) -> np.ndarray:
        return self.prior.log_prob(theta)

    def data_term(self, theta: np.ndarray) -> np.ndarray:
        """Sum over observations of the per-observation data term, one value per row."""
        theta = np.atleast_2d(theta)
        n, m = theta.shape[0], self.x_o.shape[0]
        if self.kind == "NPE":
            return self.estimator.log_prob(theta, self._npe_condition())
        th = np.repeat(theta, m, axis=0)
        xs = np.tile(self.x_o, (n, 1))
        if self.kind == "NLE":
            vals = self.estimator.log_prob(xs, th)
        else:
            vals = self.estimator.logit(th, xs)
        return vals.reshape(n, m).sum(axis=1)

    def potential(self, theta) -> np.ndarray:
        """Unnormalized log posterior: data term plus log prior (-inf off support)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        lp = self._prior_lp(theta)
        out = np.full(theta.shape[0], -np.inf)
        ok = np.isfinite(lp)
        if np.any(ok):
            if self.kind == "NPE":
                out[ok] = self.data_term(theta[ok])
            else:
                out[ok] = self.data_term(theta[ok]) + lp[ok]
        return out

    def target(self) -> LogDensityTarget:
        box = self.prior if isinstance(self.prior, UniformBox) else None
        return LogDensityTarget(
            self.potential, self.prior.dim, None if box is None else box.lower, None if box is None else box.upper
        )

    def _npe_condition(self) -> np.ndarray:
        return self.x_o.reshape(1, -1)

    def log_prob(self, theta) -> np.ndarray:
        """NPE only: ``log q(theta | x_o)``, -inf outside the prior support.

        Not renormalized for leakage; see :meth:`leakage_acceptance`.
        """
        if self.kind != "NPE":
            raise InferenceError(f"{self.kind} posteriors are only known up to normalization; use potential()")
        single = np.ndim(theta) == 1
        out = self.potential(theta)
        return float(out[0]) if single else out

    def leakage_acceptance(self, rng: np.random.Generator, n: int = 10_000) -> float:
        draws = self.estimator.sample(self._npe_condition(), n, rng)
        return float(np.mean(np.isfinite(self._prior_lp(draws))))

    # sampling -----------------------------------------------------------------
    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        n = int(n)
        if n < 1:
            raise ValueError("n must be at least 1")
        if self.strategy == "direct":
            return self._sample_direct(n, rng)
        if self.strategy in ("mcmc", "slice"):
            run = mh_sample if self.strategy == "mcmc" else slice_sample
            samples, diag = run(self.target(), self.mcmc, n, rng, init_dist=self.prior)
            self.diagnostics = diag.to_dict()
            self.last_mcmc: McmcDiagnostics = diag
            return samples
        if self.strategy == "rejection":
            probe = self.prior.sample(10_000, rng)
            log_m = float(np.max(self.potential(probe) - self._prior_lp(probe)))
            samples, rate = rejection_sample(self.target(), self.prior, log_m, n, rng)
            self.diagnostics = {"acceptance_rate": rate, "log_M": log_m}
            return samples
        if self.strategy == "importance":
            res = importance_sample(self.target(), self.prior, max(10 * n, 1000), rng)
            self.diagnostics = {"ess": res.ess}
            return res.resample(n, rng)
        raise ValueError(f"unknown sampling strategy {self.strategy!r}")

    def _sample_direct(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cond = self._npe_condition()
        accepted: list[np.ndarray] = []
        got = drawn = 0
        while got < n:
            batch = max(n - got, 100) * 2
            draws = self.estimator.sample(cond, batch, rng)
            ok = np.isfinite(self._prior_lp(draws))
            accepted.append(draws[ok])
            got += int(ok.sum())
            drawn += batch
            if got < n and drawn >= NPE_REJECTION_CAP:
                raise InferenceError(
                    f"only {got} of {drawn} posterior draws fell inside the prior support (leakage); "
                    "train longer or on more simulations"
                )
        self.diagnostics = {"acceptance_rate": got / drawn}
        return np.concatenate(accepted)[:n]


def build_posterior(
    m: InferenceMethod,
    estimator: ConditionalEstimator,
    x_o,
    strategy: str | None = None,
    mcmc: McmcConfig | None = None,
) -> Posterior:
    """Wrap a trained estimator and observation(s) into a sampleable posterior.

    Multiple rows in ``x_o`` are treated as i.i.d. observations: NLE/NRE sum
    the per-row data terms; NPE needs a permutation-invariant embedding and
    conditions on the whole set.
    """
    x_o = np.atleast_2d(np.asarray(x_o, dtype=np.float64))
    if m.kind == "NPE":
        emb = estimator.embedding
        elem = emb.element_dim
        if emb.is_set:
            x_o = x_o.reshape(-1, elem)
        elif x_o.shape[0] > 1:
            raise InferenceError(
                "NPE with several i.i.d. observations needs a permutation-invariant embedding "
                "(EstimatorConfig(embedding={'kind': 'mean-pool', 'element_dim': ...})); "
                "alternatively use NLE or NRE, which compose observations by summation"
            )
        elif x_o.shape[1] != estimator.cond_dim:
            raise ValueError(f"x_o has {x_o.shape[1]} columns, estimator expects {estimator.cond_dim}")
    else:
        x_dim = estimator.target_dim if m.kind == "NLE" else estimator.cond_dim
        if x_o.shape[1] != x_dim:
            raise ValueError(f"x_o has {x_o.shape[1]} columns, estimator expects {x_dim}")
    strategy = strategy or ("direct" if m.kind == "NPE" else "mcmc")
    if strategy == "direct" and m.kind != "NPE":
        raise InferenceError("direct sampling is only available for NPE")
    return Posterior(m.kind, estimator, m.prior, x_o, strategy, mcmc or McmcConfig())


# sequential inference -----------------------------------------------------------

@dataclass
class SequentialResult:
    posterior: Posterior
    estimator: ConditionalEstimator
    batches: list[SimulationBatch]
    seeds: list[dict]
    train_results: list[TrainResult]

    @property
    def n_simulations(self) -> int:
        return sum(len(b) for b in self.batches)


def truncated_prior_sample(
    posterior: Posterior, n: int, rng: np.random.Generator, quantile: float = TRUNCATION_QUANTILE, n_ref: int = 10_000
) -> tuple[np.ndarray, float]:
    """Prior draws restricted to ``log q(theta | x_o)`` above the ``quantile`` of q's own samples."""
    ref = posterior.sample(n_ref, rng)
    threshold = float(np.quantile(posterior.log_prob(ref), quantile))
    accepted: list[np.ndarray] = []
    got = drawn = 0
    while got < n:
        cand = posterior.prior.sample(max(2 * (n - got), 1000), rng)
        keep = posterior.log_prob(cand) > threshold
        accepted.append(cand[keep])
        got += int(keep.sum())
        drawn += cand.shape[0]
        if drawn >= 10**6 and got / drawn < 1e-4:
            raise InferenceError(
                f"truncation acceptance {got / drawn:.1e} < 1e-4; use more rounds or simulations per round"
            )
    rate = got / drawn
    if rate < 1e-4:
        raise InferenceError(f"truncation acceptance {rate:.1e} < 1e-4; use more rounds or simulations per round")
    return np.concatenate(accepted)[:n], rate


def run_sequential(
    m: InferenceMethod,
    sim: Simulator,
    x_o,
    rounds: int,
    sims_per_round: int,
    rng=0,
    workers: int = 1,
    strategy: str | None = None,
    mcmc: McmcConfig | None = None,
) -> SequentialResult:
    """Multi-round inference focused on ``x_o``.

    Round 0 simulates from the prior with seed ``rng`` and trains with
    ``m.train.seed`` (so ``rounds=1`` is exactly the amortized pipeline).
    Later rounds propose from the current posterior (NLE/NRE) or from the
    prior truncated to the posterior's high-density region (NPE), then continue
    training the same estimator (round-0 standardizers) on every simulation
    gathered so far.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    seed = as_seed(rng)
    batches: list[SimulationBatch] = []
    seeds: list[dict] = []
    results: list[TrainResult] = []
    data: SimulationBatch | None = None
    posterior: Posterior | None = None
    for r in range(rounds):
        sim_seed = seed if r == 0 else derive_seed(seed, "sim", r)
        train_seed = m.train.seed if r == 0 else derive_seed(m.train.seed, "round", r)
        proposal_seed = derive_seed(seed, "proposal", r)
        if r == 0:
            batch = simulate_for_sbi(m.prior, sim, sims_per_round, workers, rng=sim_seed)
        else:
            prop_rng = np.random.default_rng(proposal_seed)
            if m.kind == "NPE":
                theta, rate = truncated_prior_sample(posterior, sims_per_round, prop_rng)
                logger.info("round %d: truncation acceptance %.3g", r, rate)
            else:
                theta = posterior.sample(sims_per_round, prop_rng)
            batch = simulate_theta(sim, theta, sim_seed, workers)
        batches.append(batch)
        seeds.append({"round": r, "sim": sim_seed, "train": train_seed, "proposal": proposal_seed})
        data = batch if data is None else append(data, batch)
        est = train_amortized(replace(m, train=replace(m.train, seed=train_seed)), data, None if r == 0 else est)
        results.append(est.train_result)
        posterior = build_posterior(m, est, x_o, strategy, mcmc)
    return SequentialResult(posterior, est, batches, seeds, results)


# importance correction ------------------------------------------------------------

def importance_correct(
    p,
    likelihood_fn: Callable[[np.ndarray], np.ndarray],
    n: int,
    rng: np.random.Generator,
    prior: Distribution | None = None,
) -> ImportanceResult:
    """Reweight draws from an evaluable posterior approximation toward the true posterior.

    ``p`` needs ``sample(n, rng)`` and ``log_prob(theta)`` (an NPE
    :class:`Posterior` or any :class:`~simbi.distributions.Distribution`);
    ``likelihood_fn`` returns ``log p(x_o | theta)`` per row. Weights are
    ``exp(log lik + log prior - log q)``, self-normalized.
    """
    prior = prior if prior is not None else getattr(p, "prior", None)
    if prior is None:
        raise ValueError("a prior is required when the proposal does not carry one")
    if isinstance(p, Posterior) and p.kind != "NPE":
        raise InferenceError("importance correction needs an evaluable (NPE) posterior")
    samples = p.sample(n, rng)
    log_q = np.asarray(p.log_prob(samples), dtype=np.float64)
    log_w = np.asarray(likelihood_fn(samples), dtype=np.float64) + prior.log_prob(samples) - log_q
    try:
        w, ess = normalize_log_weights(log_w)
    except SamplerError as err:
        raise InferenceError(str(err)) from err
    return ImportanceResult(samples, w, log_w, ess)
