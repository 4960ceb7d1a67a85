"""Time-series experiment data: CSV I/O, normalization, noise, splitting.

A :class:`TimeSeriesDataset` holds aligned input / output / target-parameter
records and is the currency passed between every stage of the pipeline.
Arrays are frozen after construction, so datasets can be shared freely.

Conventions fixed here and relied on elsewhere:

* single output channel (``n_y == 1``) in this release;
* normalization uses the sample (``T - 1`` denominator) standard deviation;
* the target parameter ``rho`` is deliberately **never** normalized, since
  the reported scores are defined on its raw scale;
* CSV interchange uses a fixed ``u0,...,y0,...,rho0,...`` header, ``.``
  decimal separator, and 17 significant digits on write.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "TimeSeriesDataset",
    "NormStats",
    "load_csv",
    "save_csv",
    "fit_normalizer",
    "normalize",
    "denormalize",
    "add_measurement_noise",
    "split_train_val",
]


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Aligned records ``(u_k, y_k, rho_k)`` for ``k = 0..T-1``.

    ``u`` is ``T x n_u``, ``y`` is ``T x n_y`` and ``rho`` is ``T x S``.
    ``rho`` is only meaningful for training/benchmark data; at deployment
    time it is the quantity being estimated.
    """

    u: np.ndarray
    y: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", _frozen(np.atleast_2d(self.u)))
        object.__setattr__(self, "y", _frozen(np.atleast_2d(self.y)))
        object.__setattr__(self, "rho", _frozen(np.atleast_2d(self.rho)))
        if self.u.ndim != 2 or self.y.ndim != 2 or self.rho.ndim != 2:
            raise DataError("u, y and rho must be 2-D (T x channels) arrays")
        if not (len(self.u) == len(self.y) == len(self.rho)):
            raise DataError(
                f"series lengths differ: u={len(self.u)} y={len(self.y)} "
                f"rho={len(self.rho)}"
            )
        if self.y.shape[1] != 1:
            raise DataError(f"single-output scope: n_y must be 1, got {self.y.shape[1]}")
        for name, arr in (("u", self.u), ("y", self.y), ("rho", self.rho)):
            if not np.isfinite(arr).all():
                raise DataError(f"non-finite value in {name}")

    @property
    def sample_count(self) -> int:
        return len(self.y)

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    @property
    def n_rho(self) -> int:
        return self.rho.shape[1]


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean / sample standard deviation of ``u`` and ``y``."""

    u_mean: np.ndarray
    u_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    def __post_init__(self):
        for name in ("u_mean", "u_std", "y_mean", "y_std"):
            object.__setattr__(self, name, _frozen(np.atleast_1d(getattr(self, name))))
        if np.any(self.u_std <= 0) or np.any(self.y_std <= 0):
            raise DataError("standard deviations must be strictly positive")


def load_csv(path) -> TimeSeriesDataset:
    """Read a dataset from ``path``.

    The header must name the columns ``u0..u{n_u-1}, y0, rho0..rho{S-1}``
    in that order.  Any malformed or non-finite value raises a
    :class:`DataError` naming the offending line.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        n_u = sum(1 for h in header if h.startswith("u"))
        n_y = sum(1 for h in header if h.startswith("y"))
        n_rho = sum(1 for h in header if h.startswith("rho"))
        expected = [f"u{i}" for i in range(n_u)] + [f"y{i}" for i in range(n_y)]
        expected += [f"rho{i}" for i in range(n_rho)]
        if n_u < 1 or n_y < 1 or n_rho < 1 or header != expected:
            raise DataError(f"{path}: bad header {header!r}")
        width = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not all(np.isfinite(values)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.asarray(rows)
    return TimeSeriesDataset(
        u=data[:, :n_u], y=data[:, n_u : n_u + n_y], rho=data[:, n_u + n_y :]
    )


def save_csv(ds: TimeSeriesDataset, path) -> None:
    """Write ``ds`` with the fixed header and 17 significant digits."""
    header = (
        [f"u{i}" for i in range(ds.n_u)]
        + [f"y{i}" for i in range(ds.n_y)]
        + [f"rho{i}" for i in range(ds.n_rho)]
    )
    data = np.hstack([ds.u, ds.y, ds.rho])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in data:
            writer.writerow([format(v, ".17g") for v in row])


def fit_normalizer(ds: TimeSeriesDataset) -> NormStats:
    """Per-channel mean/std of ``u`` and ``y``; ``rho`` is left alone.

    Raises :class:`DataError` for constant channels, whose standard
    deviation would be zero.
    """
    if ds.sample_count < 2:
        raise DataError("need at least 2 samples to fit a normalizer")
    u_std = ds.u.std(axis=0, ddof=1)
    y_std = ds.y.std(axis=0, ddof=1)
    if np.any(u_std == 0):
        raise DataError(f"degenerate (constant) u channel: {np.where(u_std == 0)[0]}")
    if np.any(y_std == 0):
        raise DataError(f"degenerate (constant) y channel: {np.where(y_std == 0)[0]}")
    return NormStats(
        u_mean=ds.u.mean(axis=0), u_std=u_std, y_mean=ds.y.mean(axis=0), y_std=y_std
    )


def normalize(ds: TimeSeriesDataset, stats: NormStats) -> TimeSeriesDataset:
    return TimeSeriesDataset(
        u=(ds.u - stats.u_mean) / stats.u_std,
        y=(ds.y - stats.y_mean) / stats.y_std,
        rho=ds.rho,
    )


def denormalize(ds: TimeSeriesDataset, stats: NormStats) -> TimeSeriesDataset:
    return TimeSeriesDataset(
        u=ds.u * stats.u_std + stats.u_mean,
        y=ds.y * stats.y_std + stats.y_mean,
        rho=ds.rho,
    )


def add_measurement_noise(
    ds: TimeSeriesDataset,
    sigma: float,
    seed,
    corrupt_rho: bool = False,
) -> TimeSeriesDataset:
    """Superimpose i.i.d. zero-mean Gaussian noise of std ``sigma`` on u and y.

    Meant to be applied *after* normalization so that ``sigma`` is relative
    to unit-variance signals.  ``rho`` is untouched unless ``corrupt_rho``
    is set.  Deterministic given ``seed``.
    """
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return ds
    rng = np.random.default_rng(seed)
    u = ds.u + sigma * rng.standard_normal(ds.u.shape)
    y = ds.y + sigma * rng.standard_normal(ds.y.shape)
    rho = ds.rho
    if corrupt_rho:
        rho = rho + sigma * rng.standard_normal(rho.shape)
    return TimeSeriesDataset(u=u, y=y, rho=rho)


def split_train_val(
    ds: TimeSeriesDataset, fraction: float
) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Contiguous tail split: last ``round(fraction * T)`` samples are validation.

    No shuffling, so the temporal structure of both parts is preserved and
    concatenating them in order reproduces the original dataset.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fraction must be in (0, 1), got {fraction}")
    n_val = int(round(fraction * ds.sample_count))
    if n_val < 1 or n_val >= ds.sample_count:
        raise ConfigError(
            f"fraction {fraction} gives a degenerate split of {ds.sample_count} samples"
        )
    cut = ds.sample_count - n_val
    train = TimeSeriesDataset(u=ds.u[:cut], y=ds.y[:cut], rho=ds.rho[:cut])
    val = TimeSeriesDataset(u=ds.u[cut:], y=ds.y[cut:], rho=ds.rho[cut:])
    return train, val
