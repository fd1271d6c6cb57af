"""``simbi`` command line: simulate, import, train, sample, diagnose, corner, replay.

Exit codes: 0 success, 1 usage/configuration error, 2 numerical failure.
Every command writes its artifacts plus ``manifest.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from simbi import diagnostics as dg
from simbi.cli.config import (
    ConfigError,
    diagnostics_from,
    load_config,
    mcmc_from,
    method_from,
    prior_from,
    strategy_from,
    validate,
)
from simbi.cli.corner import CornerError, corner_data
from simbi.cli.registry import UnknownSimulator, make_simulator, oracle_posterior
from simbi.estimators import load_checkpoint, save_checkpoint
from simbi.inference import InferenceError, build_posterior, run_sequential, train_amortized
from simbi.neural import TrainingError
from simbi.samplers import SamplerError
from simbi.seeding import derive_seed
from simbi.simgym import (
    CsvFormatError,
    SimulationError,
    filter_valid,
    format_float,
    load_batch,
    read_batch_csv,
    save_batch,
    simulate_for_sbi,
)

logger = logging.getLogger("simbi")

NUMERICAL_ERRORS = (TrainingError, SamplerError, InferenceError, dg.DiagnosticError, SimulationError, FloatingPointError)
USAGE_ERRORS = (ConfigError, CsvFormatError, CornerError, UnknownSimulator, FileNotFoundError, ValueError, KeyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# file helpers ----------------------------------------------------------------------------

def write_samples(samples: np.ndarray, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(f"theta_{j}" for j in range(samples.shape[1]))]
    lines += [",".join(map(format_float, row)) for row in samples]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_samples(path: str | Path) -> np.ndarray:
    rows = Path(path).read_text().splitlines()
    if not rows:
        raise CsvFormatError(f"{path}: empty samples file")
    start = 1 if rows[0].startswith("theta_") else 0
    try:
        return np.array([[float(c) for c in r.split(",")] for r in rows[start:] if r.strip()], dtype=np.float64)
    except ValueError as err:
        raise CsvFormatError(f"{path}: {err}") from err


def parse_x_obs(text: str) -> np.ndarray:
    """``"1,2"`` is one observation; ``"1,2;3,4"`` two i.i.d. observations; a path reads a CSV."""
    p = Path(text)
    if p.suffix == ".csv" and p.exists():
        return np.atleast_2d(read_samples(p))
    try:
        return np.array([[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()])
    except ValueError as err:
        raise UsageError(f"cannot parse --x-obs {text!r}: {err}") from err


def write_manifest(out: Path, command: str, argv: list[str], **info) -> Path:
    manifest = {"command": command, "argv": argv, **info}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


# commands -----------------------------------------------------------------------------------

def cmd_simulate(args, argv) -> int:
    cfg = load_config(args.config)
    prior = prior_from(cfg)
    sim = make_simulator(cfg.get("simulator", {}), prior)
    seed = derive_seed(cfg["seed"], "sim")
    batch = simulate_for_sbi(prior, sim, args.n, args.workers, rng=seed)
    out = Path(args.out)
    save_batch(batch, out)
    print(f"simulated {len(batch)} rows: {len(batch) - batch.n_invalid} valid, {batch.n_invalid} invalid")
    write_manifest(out, "simulate", argv, config=cfg, seeds={"sim": seed}, files={"batch": ["batch.csv", "batch.json"]})
    return 0


def cmd_import(args, argv) -> int:
    batch = read_batch_csv(args.csv, args.dim_theta, args.dim_x)
    out = Path(args.out)
    save_batch(batch, out)
    print(f"imported {len(batch)} rows: {len(batch) - batch.n_invalid} valid, {batch.n_invalid} invalid")
    write_manifest(out, "import", argv, files={"source": str(args.csv), "batch": ["batch.csv", "batch.json"]})
    return 0


def cmd_train(args, argv) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    method = method_from(cfg, derive_seed(cfg["seed"], "train"))
    if args.rounds > 1:
        if args.x_obs is None:
            raise UsageError("sequential training (--rounds > 1) needs --x-obs")
        prior = prior_from(cfg)
        sim = make_simulator(cfg.get("simulator", {}), prior)
        res = run_sequential(
            method,
            sim,
            parse_x_obs(args.x_obs),
            args.rounds,
            args.sims_per_round,
            rng=derive_seed(cfg["seed"], "sim"),
            workers=args.workers,
            strategy=strategy_from(cfg),
            mcmc=mcmc_from(cfg),
        )
        est, seeds = res.estimator, res.seeds
        batch_files = []
        for r, b in enumerate(res.batches):
            save_batch(b, out, stem=f"batch_r{r}")
            batch_files.append(f"batch_r{r}.csv")
    else:
        if args.batch is None:
            raise UsageError("train needs --batch (or --rounds > 1 with --x-obs)")
        batch = load_batch(args.batch)
        est = train_amortized(method, batch)
        seeds = [{"round": 0, "train": method.train.seed}]
        batch_files = [str(Path(args.batch) / "batch.csv")]
    tr = est.train_result
    save_checkpoint(est, out / "model.ckpt", extra={"method": method.kind, "config": cfg})
    print(f"trained {method.kind} ({est.kind}) for {tr.epochs} epochs, best validation loss {tr.best_val_loss:.6g}")
    write_manifest(
        out,
        "train",
        argv,
        config=cfg,
        method=method.kind,
        rounds=args.rounds,
        seeds=seeds,
        files={"batches": batch_files, "checkpoint": "model.ckpt"},
        train={"epochs": tr.epochs, "best_epoch": tr.best_epoch, "val_loss": tr.best_val_loss},
    )
    return 0


def _posterior_from_checkpoint(path, cfg_override):
    est, extra = load_checkpoint(path)
    cfg = validate(extra["config"])
    if cfg_override is not None:
        want = cfg_override.get("method", {}).get("kind", "NPE").upper()
        if want != extra["method"]:
            raise UsageError(f"checkpoint was trained with {extra['method']}, config asks for {want}")
        cfg = {**cfg, **{k: v for k, v in cfg_override.items() if k in ("sampler", "diagnostics", "seed")}}
    method = method_from(cfg, 0)
    return est, method, cfg


def cmd_sample(args, argv) -> int:
    override = load_config(args.config) if args.config else None
    x_obs = parse_x_obs(args.x_obs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.oracle:
        if override is None:
            raise UsageError("--oracle needs --config")
        cfg = override
        seed = args.seed if args.seed is not None else derive_seed(cfg["seed"], "sample")
        post = oracle_posterior(cfg.get("simulator", {}), prior_from(cfg), x_obs)
        samples = post.sample(args.n, np.random.default_rng(seed))
        info = {"method": "oracle"}
    else:
        if args.checkpoint is None:
            raise UsageError("sample needs --checkpoint (or --oracle)")
        est, method, cfg = _posterior_from_checkpoint(args.checkpoint, override)
        seed = args.seed if args.seed is not None else derive_seed(cfg["seed"], "sample")
        post = build_posterior(method, est, x_obs, strategy_from(cfg), mcmc_from(cfg))
        samples = post.sample(args.n, np.random.default_rng(seed))
        info = {"method": method.kind, "strategy": post.strategy, "sampler": {**post.diagnostics, "seed": seed}}
        (out / "sampler.json").write_text(json.dumps(info["sampler"], indent=2, default=float) + "\n")
    write_samples(samples, out / "samples.csv")
    print(f"wrote {samples.shape[0]} samples to {out / 'samples.csv'}")
    write_manifest(
        out,
        "sample",
        argv,
        seeds={"sample": seed},
        x_obs=x_obs.tolist(),
        files={"checkpoint": args.checkpoint, "samples": "samples.csv"},
        **info,
    )
    return 0


def _posterior_fn(args, cfg):
    """Returns (prior, simulator, sample_fn(x, n, rng), log_q(theta, x) or None, cfg)."""
    if args.oracle:
        if cfg is None:
            raise UsageError("--oracle needs --config")
        prior = prior_from(cfg)
        sec = cfg.get("simulator", {})

        def sample_fn(x, n, rng):
            return oracle_posterior(sec, prior, x).sample(n, rng)

        def log_q(theta, x):
            return oracle_posterior(sec, prior, x).log_prob(theta)

    else:
        if args.checkpoint is None:
            raise UsageError("diagnose needs --checkpoint or --oracle")
        est, method, cfg = _posterior_from_checkpoint(args.checkpoint, cfg)
        prior = method.prior
        strategy, mcmc = strategy_from(cfg), mcmc_from(cfg)

        def sample_fn(x, n, rng):
            return build_posterior(method, est, x, strategy, mcmc).sample(n, rng)

        log_q = None
        if method.kind == "NPE":

            def log_q(theta, x):
                return build_posterior(method, est, x).log_prob(theta)

    sim = make_simulator(cfg.get("simulator", {}), prior)
    return prior, sim, sample_fn, log_q, cfg


def cmd_diagnose(args, argv) -> int:
    out = Path(args.out)
    cfg = load_config(args.config) if args.config else None
    if args.kind == "c2st":
        if not (args.samples_p and args.samples_q):
            raise UsageError("diagnose c2st needs --samples-p and --samples-q")
        seed = args.seed if args.seed is not None else (derive_seed(cfg["seed"], "diag") if cfg else 0)
        opts = diagnostics_from(cfg or {})
        res = dg.c2st(read_samples(args.samples_p), read_samples(args.samples_q), folds=opts["c2st_folds"], rng=seed)
        report = dg.c2st_report(res, opts["c2st_max_accuracy"])
    else:
        prior, sim, sample_fn, log_q, cfg = _posterior_fn(args, cfg)
        opts = diagnostics_from(cfg)
        seed = args.seed if args.seed is not None else derive_seed(cfg["seed"], "diag")
        if args.kind == "sbc":
            res = dg.run_sbc(prior, sim, sample_fn, opts["n_trials"], opts["n_posterior_samples"], rng=seed)
            report = dg.sbc_report(res, opts["sbc_alpha"])
        else:
            n, m = opts["n_cases"], opts["n_coverage_samples"]
            cases = filter_valid(simulate_for_sbi(prior, sim, n, rng=derive_seed(seed, "sim")))
            theta, xs, n = cases.theta, cases.x, len(cases)
            samples = np.stack([sample_fn(xs[i], m, np.random.default_rng(derive_seed(seed, "post", i))) for i in range(n)])
            if args.kind == "tarp":
                curve = dg.run_tarp(theta, samples, np.random.default_rng(derive_seed(seed, "ref")))
            else:
                if log_q is None:
                    raise UsageError("density-rank coverage needs an evaluable posterior (NPE or --oracle)")
                curve = dg.expected_coverage_rank(theta, log_q, samples, xs)
            report = dg.coverage_report(curve, opts["coverage_max_deviation"])
    report.save(out)
    print(f"{report.method}: {report.verdict}")
    write_manifest(out, "diagnose", argv, kind=args.kind, seeds={"diag": seed}, files={"report": ["report.json", "report.csv"]})
    return 0


def _parse_condition(text: str | None) -> dict[int, float]:
    if not text:
        return {}
    try:
        return {int(k): float(v) for k, v in (item.split("=") for item in text.split(","))}
    except ValueError as err:
        raise UsageError(f"--condition expects 'dim=value[,dim=value]', got {text!r}") from err


def cmd_corner(args, argv) -> int:
    samples = read_samples(args.samples)
    band = np.inf if args.band is None else args.band
    data = corner_data(samples, args.bins, _parse_condition(args.condition), band)
    out = Path(args.out)
    data.save(out / "corner.json")
    print(f"wrote corner data for {samples.shape[1]} dimensions ({data.n_used} samples used)")
    write_manifest(out, "corner", argv, files={"samples": args.samples, "corner": "corner.json"})
    return 0


def cmd_replay(args, argv) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    old = list(manifest["argv"])
    if args.out:
        i = old.index("--out")
        old[i + 1] = args.out
    return main(old)


# parser ----------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="simbi", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a training batch from the configured prior/simulator")
    s.add_argument("--config", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)

    s = sub.add_parser("import", help="import an external CSV of (theta, x) rows")
    s.add_argument("--csv", required=True)
    s.add_argument("--dim-theta", type=int, required=True)
    s.add_argument("--dim-x", type=int, required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", help="train an estimator (amortized, or sequential with --rounds)")
    s.add_argument("--config", required=True)
    s.add_argument("--batch", help="directory holding batch.csv/batch.json")
    s.add_argument("--rounds", type=int, default=1)
    s.add_argument("--sims-per-round", type=int, default=1000)
    s.add_argument("--x-obs")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)

    s = sub.add_parser("sample", help="draw posterior samples for an observation")
    s.add_argument("--checkpoint")
    s.add_argument("--config")
    s.add_argument("--oracle", action="store_true", help="sample the analytic linear-Gaussian posterior")
    s.add_argument("--x-obs", required=True)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("diagnose", help="calibration diagnostics")
    s.add_argument("kind", choices=["sbc", "tarp", "coverage", "c2st"])
    s.add_argument("--checkpoint")
    s.add_argument("--config")
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--samples-p")
    s.add_argument("--samples-q")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("corner", help="export histogram data for corner plots")
    s.add_argument("--samples", required=True)
    s.add_argument("--bins", type=int, default=20)
    s.add_argument("--condition", help="e.g. '0=0.5' to condition on theta_0 near 0.5")
    s.add_argument("--band", type=float)
    s.add_argument("--out", required=True)

    s = sub.add_parser("replay", help="re-run a command from its manifest.json")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out")
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "import": cmd_import,
    "train": cmd_train,
    "sample": cmd_sample,
    "diagnose": cmd_diagnose,
    "corner": cmd_corner,
    "replay": cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except NUMERICAL_ERRORS as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except USAGE_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
