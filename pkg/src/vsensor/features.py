"""Feature extraction from windows of observer residuals.

Two maps are provided.  The identity map stacks the raw residual window of
every observer next to the current input and output:

    [e^1_k, e^1_{k-1}, .., e^1_{k-l}, ..., e^N_k, .., e^N_{k-l}, u_k, y_k]

(observer-major, newest residual first within each block).  The compressed
map replaces each observer's block by a single weighted sum of absolute
residuals over the window,

    nu^j_k = sum_{w=0}^{l} sqrt(m(w) / l) * |e^j_{k-l+w}|,

yielding a feature vector of only ``N + n_u + 1`` entries.  ``w`` counts
window positions from the oldest sample; with the default uniform weights
the two possible orientations of ``m`` coincide.  For a single output the
residual norm inside the square root reduces to an absolute value, which
is how it is computed here.

The block ordering above is part of the serialized-sensor contract: a
trained predictor is only valid together with the exact feature layout it
was trained on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import TimeSeriesDataset
from .errors import ConfigError, DataError
from .observers import BankOutput

__all__ = [
    "FeatureConfig",
    "fe_identity",
    "fe_compressed",
    "feature_width",
    "build_feature_matrix",
    "save_feature_csv",
]

IDENTITY = "identity_residual"
COMPRESSED = "compressed_rms"


@dataclass(frozen=True)
class FeatureConfig:
    """Which map to apply, the window size, and the window weights."""

    map_kind: str = COMPRESSED
    window: int = 7
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.map_kind not in (IDENTITY, COMPRESSED):
            raise ConfigError(f"unknown feature map {self.map_kind!r}")
        if self.window < 0:
            raise ConfigError(f"window must be >= 0, got {self.window}")
        if self.map_kind == COMPRESSED and self.window < 1:
            raise ConfigError("the compressed map needs a window of at least 1")
        w = self.weights
        if w is None:
            w = np.ones(self.window + 1)
        w = np.asarray(w, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.weights.shape != (self.window + 1,):
            raise ConfigError(
                f"weights must have length window+1={self.window + 1}, "
                f"got {self.weights.shape}"
            )
        if np.any(self.weights < 0) or not np.any(self.weights > 0):
            raise ConfigError("weights must be nonnegative and not all zero")


def feature_width(config: FeatureConfig, bank_size: int, n_u: int, n_y: int = 1) -> int:
    if config.map_kind == IDENTITY:
        return bank_size * (config.window + 1) * n_y + n_u + n_y
    return (bank_size + 1) * n_y + n_u  # == bank_size + n_u + 1 for n_y = 1


def _check_window(window: np.ndarray, ell: int) -> np.ndarray:
    window = np.atleast_2d(np.asarray(window, dtype=float))
    if window.shape[0] != ell + 1:
        raise DataError(
            f"residual window has {window.shape[0]} rows, expected {ell + 1}"
        )
    return window


def fe_identity(residual_window: np.ndarray, u_k: np.ndarray, y_k: float) -> np.ndarray:
    """Stack a full ``(l+1) x N`` residual window (rows oldest..newest).

    Output layout: per observer, residuals newest first, then ``u_k``,
    then ``y_k``.
    """
    window = np.atleast_2d(np.asarray(residual_window, dtype=float))
    ell = window.shape[0] - 1
    window = _check_window(window, ell)
    blocks = window[::-1].T.ravel()  # observer-major, newest-first
    return np.concatenate([blocks, np.atleast_1d(u_k).astype(float), [float(y_k)]])


def fe_compressed(
    residual_window: np.ndarray,
    weights: np.ndarray,
    ell: int,
    u_k: np.ndarray,
    y_k: float,
) -> np.ndarray:
    """One weighted absolute-residual sum per observer, then ``u_k``, ``y_k``."""
    if ell < 1:
        raise ConfigError("the compressed map needs a window of at least 1")
    window = _check_window(residual_window, ell)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (ell + 1,):
        raise ConfigError(f"need {ell + 1} weights, got {weights.shape}")
    scale = np.sqrt(weights / ell)
    nu = scale @ np.abs(window)
    return np.concatenate([nu, np.atleast_1d(u_k).astype(float), [float(y_k)]])


def build_feature_matrix(
    bank_output: BankOutput, ds: TimeSeriesDataset, config: FeatureConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Feature rows for every time with a full window, plus aligned targets.

    Row ``r`` corresponds to time ``k = r + window`` and is paired with
    ``rho_k``; the first ``window`` samples of the record are consumed as
    warm-up.  Returns ``(X, rho_targets)``.
    """
    if bank_output.sample_count != ds.sample_count:
        raise DataError(
            f"bank output covers {bank_output.sample_count} samples, "
            f"dataset has {ds.sample_count}"
        )
    ell = config.window
    T = ds.sample_count
    if T <= ell:
        raise DataError(f"dataset of {T} samples is shorter than the window {ell}")
    resid = bank_output.residuals
    # (T - ell) x (ell + 1) x N, rows oldest..newest within the window
    windows = np.lib.stride_tricks.sliding_window_view(resid, ell + 1, axis=0)
    windows = windows.transpose(0, 2, 1)
    u_tail = ds.u[ell:]
    y_tail = ds.y[ell:]
    if config.map_kind == IDENTITY:
        # observer-major, newest residual first
        stacked = windows[:, ::-1].transpose(0, 2, 1).reshape(T - ell, -1)
        X = np.hstack([stacked, u_tail, y_tail])
    else:
        scale = np.sqrt(config.weights / ell)
        nu = np.einsum("kwn,w->kn", np.abs(windows), scale)
        X = np.hstack([nu, u_tail, y_tail])
    return X, ds.rho[ell:]


def save_feature_csv(path, X: np.ndarray, targets: np.ndarray) -> None:
    """Dump a feature matrix with its aligned targets for offline inspection."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [f"f{i}" for i in range(X.shape[1])]
            + [f"rho{i}" for i in range(targets.shape[1])]
        )
        for row, target in zip(X, targets):
            writer.writerow(
                [format(v, ".17g") for v in row] + [format(v, ".17g") for v in target]
            )
