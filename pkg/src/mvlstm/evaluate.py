"""Prediction metrics, attention collection, variable importance and
histogram export.

Importance aggregates the posterior attention over a dataset with the
literal two-sum normalization (per-variable sum over sequences divided by the
grand total); because each posterior sums to one this equals the mean
posterior, and both facts are covered by tests.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .data import SplitData
from .errors import ContractError


def rmse(y, yhat) -> float:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.size == 0 or y.shape != yhat.shape:
        raise ContractError(f"rmse needs equal nonempty inputs, got {y.shape} vs {yhat.shape}")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def mae(y, yhat) -> float:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.size == 0 or y.shape != yhat.shape:
        raise ContractError(f"mae needs equal nonempty inputs, got {y.shape} vs {yhat.shape}")
    return float(np.mean(np.abs(y - yhat)))


def collect_attention(model, params, split: SplitData,
                      batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Per-sequence prior and posterior attention over a split, dropout off."""
    from .variants import forward_batch

    if not model.mixture:
        raise ContractError(
            f"variant '{model.tag}' has no posterior attention to collect")
    priors, posteriors = [], []
    n = len(split.batch)
    for lo in range(0, n, batch_size):
        out = forward_batch(model, params,
                            split.batch.inputs[lo:lo + batch_size],
                            y=split.batch.targets[lo:lo + batch_size])
        priors.append(out["prior"])
        posteriors.append(out["posterior"])
    return np.concatenate(priors, axis=0), np.concatenate(posteriors, axis=0)


def importance(posteriors: np.ndarray) -> np.ndarray:
    """Aggregate posterior attention into one distribution over variables."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2 or posteriors.shape[0] < 1:
        raise ContractError(
            f"importance needs an [M,N] posterior matrix with M >= 1, got {posteriors.shape}")
    per_var = posteriors.sum(axis=0)
    return per_var / per_var.sum()


def rank_variables(imp: np.ndarray) -> list[int]:
    """Indices sorted by importance descending; ties break to the lower index."""
    return sorted(range(len(imp)), key=lambda i: (-imp[i], i))


def attention_histograms(priors: np.ndarray, posteriors: np.ndarray,
                         bins: int = 50) -> dict:
    """Per-variable histograms of prior and posterior attention over [0, 1].

    Returns {"bin_edges": [...], "variables": [{"prior": counts,
    "posterior": counts}, ...]}; every count vector sums to the sequence
    count (values of exactly 1.0 land in the last bin).
    """
    if bins < 2:
        raise ContractError(f"need at least 2 bins, got {bins}")
    edges = np.linspace(0.0, 1.0, bins + 1)

    def counts(column: np.ndarray) -> list[int]:
        hist, _ = np.histogram(np.clip(column, 0.0, 1.0), bins=edges)
        return [int(c) for c in hist]

    n_vars = priors.shape[1]
    variables = [{"prior": counts(priors[:, n]),
                  "posterior": counts(posteriors[:, n])}
                 for n in range(n_vars)]
    return {"bin_edges": [float(e) for e in edges], "variables": variables}


def write_histogram_csv(path: str, names: list[str], hists: dict) -> None:
    """Flat CSV export: variable, kind, bin_lo, bin_hi, count."""
    edges = hists["bin_edges"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("variable,kind,bin_lo,bin_hi,count\n")
        for name, var in zip(names, hists["variables"]):
            for kind in ("prior", "posterior"):
                for b, count in enumerate(var[kind]):
                    fh.write(f"{name},{kind},{edges[b]!r},{edges[b + 1]!r},{count}\n")


def file_checksum(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def build_report(names: list[str], priors: np.ndarray, posteriors: np.ndarray,
                 split: str, checkpoint_path: str, bins: int = 50,
                 config: dict | None = None) -> dict:
    imp = importance(posteriors)
    order = rank_variables(imp)
    return {
        "importance": {names[i]: float(imp[i]) for i in range(len(names))},
        "ranking": [names[i] for i in order],
        "variable_names": list(names),
        "n_sequences": int(posteriors.shape[0]),
        "split": split,
        "checkpoint_sha256": file_checksum(checkpoint_path),
        "histograms": attention_histograms(priors, posteriors, bins),
        "config": config or {},
    }
