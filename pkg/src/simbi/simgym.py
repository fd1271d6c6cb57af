"""Running simulators over prior draws and handling the resulting datasets."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from simbi.distributions import Distribution
from simbi.seeding import as_seed, derive_seed, rng_for

logger = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Raised when a simulation run produced nothing usable."""


@dataclass(frozen=True)
class Simulator:
    """A forward model ``fn(theta, seed) -> x`` with declared dimensions.

    ``fn`` receives a ``(m, dim_theta)`` matrix and an integer seed and must
    return an ``(m, dim_x)`` matrix. It must be pure given the seed and safe to
    call from several threads. NaN/Inf in the output marks a failed row.
    """

    fn: Callable[[np.ndarray, int], np.ndarray]
    dim_theta: int
    dim_x: int
    name: str = "simulator"

    def __call__(self, theta: np.ndarray, seed: int) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        x = np.asarray(self.fn(theta, int(seed)), dtype=np.float64).reshape(theta.shape[0], -1)
        if x.shape[1] != self.dim_x:
            raise SimulationError(f"{self.name} returned {x.shape[1]} columns, declared {self.dim_x}")
        return x


def _row_validity(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.all(np.isfinite(theta), axis=1) & np.all(np.isfinite(x), axis=1)


@dataclass
class SimulationBatch:
    theta: np.ndarray
    x: np.ndarray
    valid: np.ndarray | None = None
    seed: int = 0
    provenance: str = ""
    dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=np.float64))
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        if self.theta.shape[0] != self.x.shape[0]:
            raise ValueError("theta and x must have the same number of rows")
        self.valid = _row_validity(self.theta, self.x)

    def __len__(self) -> int:
        return self.theta.shape[0]

    @property
    def dim_theta(self) -> int:
        return self.theta.shape[1]

    @property
    def dim_x(self) -> int:
        return self.x.shape[1]

    @property
    def n_invalid(self) -> int:
        return int(np.sum(~self.valid))

    @classmethod
    def empty(cls, dim_theta: int, dim_x: int) -> "SimulationBatch":
        return cls(np.zeros((0, dim_theta)), np.zeros((0, dim_x)))

    def subset(self, idx) -> "SimulationBatch":
        return SimulationBatch(self.theta[idx], self.x[idx], seed=self.seed, provenance=self.provenance)

    def split(self, index: int) -> tuple["SimulationBatch", "SimulationBatch"]:
        return self.subset(slice(0, index)), self.subset(slice(index, None))

    def equals(self, other: "SimulationBatch") -> bool:
        """Bit-level equality of contents (NaN compares equal to NaN)."""
        return (
            self.theta.shape == other.theta.shape
            and self.x.shape == other.x.shape
            and np.array_equal(self.theta, other.theta, equal_nan=True)
            and np.array_equal(self.x, other.x, equal_nan=True)
            and np.array_equal(self.valid, other.valid)
        )


def filter_valid(b: SimulationBatch) -> SimulationBatch:
    """Keep only valid rows, in order. ``dropped`` on the result counts removals."""
    n_valid = int(b.valid.sum())
    if n_valid == 0:
        raise SimulationError("no valid simulations to train on")
    out = b.subset(b.valid)
    out.dropped = b.dropped + len(b) - n_valid
    if out.dropped:
        logger.info("dropped %d invalid simulations, kept %d", len(b) - n_valid, n_valid)
    return out


def append(a: SimulationBatch, b: SimulationBatch) -> SimulationBatch:
    if a.dim_theta != b.dim_theta or a.dim_x != b.dim_x:
        raise ValueError(
            f"cannot append batches of dims ({b.dim_theta}, {b.dim_x}) to ({a.dim_theta}, {a.dim_x})"
        )
    prov = "; ".join(p for p in (a.provenance, b.provenance) if p)
    out = SimulationBatch(np.concatenate([a.theta, b.theta]), np.concatenate([a.x, b.x]), seed=a.seed, provenance=prov)
    out.dropped = a.dropped + b.dropped
    return out


def run_rows(sim: Simulator, theta: np.ndarray, seed: int, workers: int = 1) -> tuple[np.ndarray, list[str]]:
    """Simulate every row of ``theta`` with per-row seeds; returns ``x`` and chunk errors."""
    if workers < 1:
        raise ValueError("workers must be at least 1")
    n = theta.shape[0]
    row_seeds = [derive_seed(seed, "row", i) for i in range(n)]
    chunk = max(1, math.ceil(n / (4 * workers)))
    bounds = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]

    def run_row(i):
        try:
            return sim(theta[i : i + 1], row_seeds[i]), None
        except SimulationError:
            raise
        except Exception as err:  # noqa: BLE001 - any simulator failure invalidates its row
            return np.full((1, sim.dim_x), np.nan), f"row {i}: {type(err).__name__}: {err}"

    def run_chunk(bound):
        lo, hi = bound
        out = [run_row(i) for i in range(lo, hi)]
        errs = [e for _, e in out if e]
        summary = None
        if errs:
            summary = "; ".join(errs[:3]) + (f" (+{len(errs) - 3} more)" if len(errs) > 3 else "")
        return np.concatenate([x for x, _ in out]), summary

    if workers == 1:
        results = [run_chunk(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chunk, bounds))
    x = np.concatenate([r[0] for r in results]) if results else np.zeros((0, sim.dim_x))
    return x, [r[1] for r in results if r[1]]


def simulate_for_sbi(
    prior: Distribution, sim: Simulator, n: int, workers: int = 1, rng=0, proposal: Distribution | None = None
) -> SimulationBatch:
    """Draw ``n`` parameters from ``proposal`` (default: the prior) and simulate them.

    Output is identical for any ``workers`` count: row ``i`` is simulated with a
    seed derived from the batch seed and ``i``, independent of chunking.
    """
    if int(n) < 1:
        raise ValueError("n must be at least 1")
    if prior.dim != sim.dim_theta:
        raise ValueError(f"prior dim {prior.dim} does not match simulator dim_theta {sim.dim_theta}")
    seed = as_seed(rng)
    theta = (proposal or prior).sample(int(n), rng_for(seed, "theta"))
    return simulate_theta(sim, theta, seed, workers)


def simulate_theta(sim: Simulator, theta: np.ndarray, seed: int, workers: int = 1) -> SimulationBatch:
    x, errors = run_rows(sim, theta, seed, workers)
    prov = f"{sim.name}(n={theta.shape[0]}, seed={seed})"
    if errors:
        prov += " errors[" + " | ".join(errors) + "]"
    batch = SimulationBatch(theta, x, seed=seed, provenance=prov)
    if not batch.valid.any():
        raise SimulationError(f"{sim.name} failed on every row" + (f": {errors[0]}" if errors else ""))
    return batch


# persistence -------------------------------------------------------------------

def column_names(dim_theta: int, dim_x: int) -> list[str]:
    return [f"theta_{i}" for i in range(dim_theta)] + [f"x_{j}" for j in range(dim_x)] + ["valid"]


def format_float(v: float) -> str:
    return "%.17g" % v


def save_batch(b: SimulationBatch, directory: str | Path, stem: str = "batch") -> tuple[Path, Path]:
    """Write ``<stem>.json`` (header) and ``<stem>.csv`` (rows) into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = column_names(b.dim_theta, b.dim_x)
    csv_path, json_path = directory / f"{stem}.csv", directory / f"{stem}.json"
    lines = [",".join(names)]
    for t, x, v in zip(b.theta, b.x, b.valid):
        lines.append(",".join([*map(format_float, t), *map(format_float, x), "1" if v else "0"]))
    csv_path.write_text("\n".join(lines) + "\n")
    header = {
        "dims": {"theta": b.dim_theta, "x": b.dim_x},
        "n": len(b),
        "n_invalid": b.n_invalid,
        "seed": int(b.seed),
        "provenance": b.provenance,
        "columns": names,
    }
    json_path.write_text(json.dumps(header, indent=2) + "\n")
    return csv_path, json_path


class CsvFormatError(ValueError):
    pass


def read_batch_csv(path: str | Path, dim_theta: int, dim_x: int, has_valid: bool | None = None) -> SimulationBatch:
    """Parse a batch CSV. The validity column, if present, is recomputed from finiteness."""
    path = Path(path)
    text = path.read_text().splitlines()
    if not text:
        raise CsvFormatError(f"{path}: empty file")
    width = dim_theta + dim_x
    start = 0
    first = text[0].split(",")
    if first and first[0].strip().startswith("theta_"):
        start = 1
        has_valid = first[-1].strip() == "valid" if has_valid is None else has_valid
        if len(first) != width + int(has_valid):
            raise CsvFormatError(f"{path}: line 1: header has {len(first)} columns, expected {width + int(has_valid)}")
    rows = []
    for lineno, line in enumerate(text[start:], start=start + 1):
        if not line.strip():
            continue
        cells = line.split(",")
        expect = {width, width + 1} if has_valid is None else {width + int(has_valid)}
        if len(cells) not in expect:
            raise CsvFormatError(f"{path}: line {lineno}: {len(cells)} columns, expected {sorted(expect)[-1]}")
        try:
            rows.append([float(c) for c in cells[:width]])
        except ValueError as err:
            raise CsvFormatError(f"{path}: line {lineno}: non-numeric cell ({err})") from err
    data = np.array(rows, dtype=np.float64).reshape(-1, width)
    return SimulationBatch(data[:, :dim_theta], data[:, dim_theta:], provenance=f"import:{path.name}")


def load_batch(directory: str | Path, stem: str = "batch") -> SimulationBatch:
    directory = Path(directory)
    header = json.loads((directory / f"{stem}.json").read_text())
    b = read_batch_csv(directory / f"{stem}.csv", header["dims"]["theta"], header["dims"]["x"], has_valid=True)
    b.seed = int(header.get("seed", 0))
    b.provenance = header.get("provenance", "")
    return b
