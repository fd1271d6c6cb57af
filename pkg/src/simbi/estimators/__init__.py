"""Conditional density estimators, the ratio classifier and embedding networks."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from simbi.estimators.base import ConditionalEstimator, DensityEstimator
from simbi.estimators.classifier import RatioClassifier, classifier_loss, derangement
from simbi.estimators.embedding import EmbeddingNet, embed
from simbi.estimators.maf import MafEstimator, maf_log_prob, maf_sample
from simbi.estimators.mdn import MdnEstimator, mdn_log_prob, mdn_sample

CHECKPOINT_FORMAT = "simbi-checkpoint/1"

__all__ = [
    "ConditionalEstimator",
    "DensityEstimator",
    "EmbeddingNet",
    "MafEstimator",
    "MdnEstimator",
    "RatioClassifier",
    "classifier_loss",
    "derangement",
    "embed",
    "estimator_from_header",
    "load_checkpoint",
    "maf_log_prob",
    "maf_sample",
    "mdn_log_prob",
    "mdn_sample",
    "save_checkpoint",
]

_CLASSES = {"mdn": MdnEstimator, "maf": MafEstimator, "ratio-classifier": RatioClassifier}


def estimator_from_header(header: dict) -> ConditionalEstimator:
    """Rebuild an (untrained) estimator with the architecture recorded in ``header``."""
    kind = header["kind"]
    if kind not in _CLASSES:
        raise ValueError(f"unknown estimator kind {kind!r}")
    arch = dict(header["architecture"])
    arch["hidden"] = tuple(arch.get("hidden", (50, 50)))
    emb = EmbeddingNet.from_config(header["embedding"])
    est = _CLASSES[kind](embedding=emb, **arch)
    est.load_standardizers(header["standardizers"])
    return est


def save_checkpoint(est: ConditionalEstimator, path: str | Path, extra: dict | None = None) -> Path:
    """Write one file: a JSON header line, then the float64 weights as little-endian hex."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weights = est.get_flat().astype("<f8")
    head = {"format": CHECKPOINT_FORMAT, "estimator": est.header(), "n_weights": int(weights.size), "extra": extra or {}}
    path.write_text(json.dumps(head, sort_keys=True) + "\n" + weights.tobytes().hex() + "\n")
    return path


def load_checkpoint(path: str | Path) -> tuple[ConditionalEstimator, dict]:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2:
        raise ValueError(f"{path}: truncated checkpoint")
    head = json.loads(lines[0])
    if head.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    est = estimator_from_header(head["estimator"])
    weights = np.frombuffer(bytes.fromhex(lines[1].strip()), dtype="<f8")
    if weights.size != head["n_weights"]:
        raise ValueError(f"{path}: weight payload has {weights.size} values, header says {head['n_weights']}")
    est.set_flat(weights.astype(np.float64))
    return est, head.get("extra", {})
