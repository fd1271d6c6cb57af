"""Histogram data for marginal and conditional corner plots (no rendering)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CornerError(ValueError):
    pass


@dataclass
class CornerData:
    edges: list[np.ndarray]
    marginals: dict[int, np.ndarray]
    pairs: dict[tuple[int, int], np.ndarray]
    condition: dict[int, float] = field(default_factory=dict)
    band: float | None = None
    n_used: int = 0

    def to_dict(self) -> dict:
        return {
            "edges": [e.tolist() for e in self.edges],
            "marginals": {str(k): v.tolist() for k, v in self.marginals.items()},
            "pairs": {f"{i},{j}": v.tolist() for (i, j), v in self.pairs.items()},
            "condition": {str(k): v for k, v in self.condition.items()},
            "band": self.band,
            "n_used": self.n_used,
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        return path


def _edges(col: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = float(col.min()), float(col.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def corner_data(samples, bins: int = 20, condition: dict[int, float] | None = None, band: float = np.inf) -> CornerData:
    """Normalized 1-d and pairwise 2-d histograms of posterior samples.

    With ``condition`` (``{dim: value}``), only samples within ``band`` of
    every fixed value are kept and the remaining dimensions are histogrammed.
    Bin edges always come from the full sample set, so an infinitely wide band
    reproduces the unconditional marginals.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.size == 0:
        raise CornerError("no samples to histogram")
    if bins < 2:
        raise CornerError("bins must be at least 2")
    d = samples.shape[1]
    condition = {int(k): float(v) for k, v in (condition or {}).items()}
    if any(k < 0 or k >= d for k in condition):
        raise CornerError(f"conditioned dimensions must lie in 0..{d - 1}")
    edges = [_edges(samples[:, j], bins) for j in range(d)]
    keep = np.ones(samples.shape[0], dtype=bool)
    for k, v in condition.items():
        keep &= np.abs(samples[:, k] - v) < band
    if not keep.any():
        raise CornerError(f"conditioning band {band} keeps no samples; widen the band")
    used = samples[keep]
    free = [j for j in range(d) if j not in condition]
    marginals = {}
    for j in free:
        h, _ = np.histogram(used[:, j], bins=edges[j])
        marginals[j] = h / h.sum()
    pairs = {}
    for a, i in enumerate(free):
        for j in free[a + 1 :]:
            h, _, _ = np.histogram2d(used[:, i], used[:, j], bins=[edges[i], edges[j]])
            pairs[(i, j)] = h / h.sum()
    return CornerData(edges, marginals, pairs, condition, None if np.isinf(band) else float(band), int(keep.sum()))
