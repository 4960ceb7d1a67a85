"""Scores for parameter estimates and aggregation over repeated runs.

Both scores are clamped at zero and equal 1 only for a perfect estimate:

    FIT   = max{0, 1 - ||rho - rho_hat|| / ||mean(rho) - rho||}
    NRMSE = max{0, 1 - ||rho - rho_hat|| / (sqrt(T) |max(rho) - min(rho)|)}

For multi-component targets both are computed per component and averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

__all__ = [
    "RunReport",
    "fit_score",
    "nrmse_score",
    "f1_per_mode",
    "aggregate_runs",
]


def _as_columns(rho_true, rho_hat) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(rho_true, dtype=float)
    b = np.asarray(rho_hat, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise DataError(f"series shapes differ: {a.shape} vs {b.shape}")
    if len(a) < 2:
        raise DataError("need at least 2 samples to score")
    return a, b


def fit_score(rho_true, rho_hat) -> float:
    """Clamped fit ratio; 1 is perfect, 0 is no better than the mean."""
    a, b = _as_columns(rho_true, rho_hat)
    scores = []
    for s in range(a.shape[1]):
        denom = np.linalg.norm(a[:, s] - a[:, s].mean())
        if denom == 0:
            raise DataError(f"fit undefined: target component {s} is constant")
        scores.append(max(0.0, 1.0 - np.linalg.norm(a[:, s] - b[:, s]) / denom))
    return float(np.mean(scores))


def nrmse_score(rho_true, rho_hat) -> float:
    """Clamped range-normalized RMSE score; 1 is perfect."""
    a, b = _as_columns(rho_true, rho_hat)
    T = len(a)
    scores = []
    for s in range(a.shape[1]):
        rng = abs(a[:, s].max() - a[:, s].min())
        if rng == 0:
            raise DataError(f"nrmse undefined: target component {s} has zero range")
        scores.append(
            max(0.0, 1.0 - np.linalg.norm(a[:, s] - b[:, s]) / (np.sqrt(T) * rng))
        )
    return float(np.mean(scores))


def f1_per_mode(true_labels, predicted_labels, n_modes: int) -> np.ndarray:
    """One-vs-rest F1 per mode id ``0..n_modes-1``; 0 when P + R is 0."""
    t = np.asarray(true_labels, dtype=int)
    p = np.asarray(predicted_labels, dtype=int)
    if t.shape != p.shape:
        raise DataError(f"label series differ: {t.shape} vs {p.shape}")
    out = np.zeros(n_modes)
    for m in range(n_modes):
        tp = np.sum((t == m) & (p == m))
        fp = np.sum((t != m) & (p == m))
        fn = np.sum((t == m) & (p != m))
        denom = 2 * tp + fp + fn
        out[m] = 2 * tp / denom if denom > 0 else 0.0
    return out


@dataclass(frozen=True)
class RunReport:
    """Scores and bookkeeping for one train/evaluate cycle."""

    fit: float
    nrmse: float
    seed: int | None = None
    per_mode_f1: np.ndarray | None = None
    train_seconds: float = 0.0
    eval_seconds: float = 0.0

    def to_dict(self) -> dict:
        doc = {
            "fit": self.fit,
            "nrmse": self.nrmse,
            "seed": self.seed,
            "train_seconds": self.train_seconds,
            "eval_seconds": self.eval_seconds,
        }
        if self.per_mode_f1 is not None:
            doc["per_mode_f1"] = np.asarray(self.per_mode_f1).tolist()
        return doc


def aggregate_runs(reports: list[RunReport]) -> dict:
    """Sample mean and standard deviation of every metric across runs."""
    if len(reports) < 1:
        raise DataError("nothing to aggregate")
    fits = np.array([r.fit for r in reports])
    nrmses = np.array([r.nrmse for r in reports])

    def stats(x: np.ndarray, axis=0):
        mean = x.mean(axis=axis)
        if x.shape[axis] > 1:
            # anchor on the first run so identical runs give exactly 0
            std = (x - np.take(x, [0], axis=axis)).std(axis=axis, ddof=1)
        else:
            std = np.zeros_like(mean)
        return mean, std

    fit_mean, fit_std = stats(fits)
    nrmse_mean, nrmse_std = stats(nrmses)
    out = {
        "runs": len(reports),
        "fit_mean": float(fit_mean),
        "fit_std": float(fit_std),
        "nrmse_mean": float(nrmse_mean),
        "nrmse_std": float(nrmse_std),
    }
    if all(r.per_mode_f1 is not None for r in reports):
        f1 = np.array([np.asarray(r.per_mode_f1) for r in reports])
        f1_mean, f1_std = stats(f1)
        out["f1_mean"] = f1_mean.tolist()
        out["f1_std"] = np.atleast_1d(f1_std).tolist()
    return out
