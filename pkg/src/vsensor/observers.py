"""Observer design and execution for a bank of local linear models.

Every model comes in observer-canonical form (``C = [0 .. 0 1]``), so an
output-injection gain only alters the last column of ``A``.  Pole placement
is therefore closed-form: subtract the last column of the companion matrix
of the desired characteristic polynomial from the last column of ``A``.
Stationary Kalman gains come from iterating the Riccati difference
equation to its fixed point, then converting the filter gain to predictor
form ``L = A P C' (C P C' + lambda)^{-1}`` so that the one recursion

    xi[k+1] = A xi[k] + d + B u[k] - L (yhat[k] - y[k]),   yhat[k] = C xi[k] + e

serves both design methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arx import StateSpaceModel
from .dataset import TimeSeriesDataset
from .errors import ConfigError, DataError, NumericalError

__all__ = [
    "ObserverSpec",
    "InfoVector",
    "ObserverBank",
    "BankOutput",
    "place_poles",
    "deadbeat_gain",
    "solve_stationary_covariance",
    "stationary_kalman_gain",
    "riccati_residual",
    "step_observer",
    "run_bank",
]

RICCATI_TOL = 1e-12
RICCATI_MAX_ITER = 10_000


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ObserverSpec:
    """Designed output-injection gain plus a record of how it was obtained.

    ``kind`` is one of ``deadbeat``, ``pole_placement`` (param = pole
    location) or ``stationary_kalman`` (param = measurement-noise weight).
    """

    kind: str
    param: float | None
    gain: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gain", _frozen(self.gain))
        if self.kind not in ("deadbeat", "pole_placement", "stationary_kalman"):
            raise ConfigError(f"unknown observer kind {self.kind!r}")


@dataclass(frozen=True)
class InfoVector:
    """What one observer reports at one time step (before its update)."""

    xi_hat: np.ndarray
    y_hat: float
    residual: float

    def __post_init__(self):
        object.__setattr__(self, "xi_hat", _frozen(self.xi_hat))


def place_poles(model: StateSpaceModel, z: float) -> ObserverSpec:
    """Gain putting every eigenvalue of ``A - L C`` at ``z`` (``|z| < 1``)."""
    if abs(z) >= 1:
        raise ConfigError(f"observer pole must be inside the unit circle, got {z}")
    v = model.order
    # coefficients of (x - z)^v: coeff of x^i is C(v, i) (-z)^(v-i)
    desired_col = np.array(
        [-math.comb(v, i) * (-z) ** (v - i) for i in range(v)], dtype=float
    )
    gain = model.A[:, -1] - desired_col
    kind = "deadbeat" if z == 0.0 else "pole_placement"
    return ObserverSpec(kind=kind, param=z, gain=gain)


def deadbeat_gain(model: StateSpaceModel) -> ObserverSpec:
    return place_poles(model, 0.0)


def solve_stationary_covariance(model: StateSpaceModel, lam: float) -> np.ndarray:
    """Fixed point of the prediction-error covariance recursion

        P <- A P A' + I - A P C' (C P C' + lam)^{-1} C P A'

    iterated from ``P = I`` until the update falls below ``1e-12`` in max
    norm (the pair ``(A, C)`` is observable by construction, so the
    iteration converges).
    """
    if lam <= 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    A, C = model.A, model.C
    eye = np.eye(model.order)
    P = eye.copy()
    for _ in range(RICCATI_MAX_ITER):
        PCt = P @ C.T
        s = float((C @ PCt)[0, 0]) + lam
        P_next = A @ P @ A.T + eye - (A @ PCt) @ (A @ PCt).T / s
        P_next = (P_next + P_next.T) / 2.0
        delta = np.abs(P_next - P).max()
        P = P_next
        if delta < RICCATI_TOL:
            return P
    raise NumericalError(
        f"Riccati iteration did not converge within {RICCATI_MAX_ITER} steps"
    )


def stationary_kalman_gain(model: StateSpaceModel, lam: float) -> ObserverSpec:
    """Steady-state predictor-form gain for unit process and ``lam`` output noise."""
    P = solve_stationary_covariance(model, lam)
    A, C = model.A, model.C
    gain = (A @ P @ C.T)[:, 0] / (float((C @ P @ C.T)[0, 0]) + lam)
    return ObserverSpec(kind="stationary_kalman", param=lam, gain=gain)


def riccati_residual(model: StateSpaceModel, lam: float, P: np.ndarray) -> float:
    """Max-norm defect of ``P`` as a solution of the stationary Riccati equation."""
    A, C = model.A, model.C
    PCt = P @ C.T
    s = float((C @ PCt)[0, 0]) + lam
    rhs = A @ P @ A.T + np.eye(model.order) - (A @ PCt) @ (A @ PCt).T / s
    return float(np.abs(P - rhs).max())


def step_observer(
    model: StateSpaceModel,
    spec: ObserverSpec,
    xi_hat: np.ndarray,
    u: np.ndarray,
    y: float,
) -> tuple[np.ndarray, InfoVector]:
    """One observer update; returns the next state and the current report."""
    xi_hat = np.asarray(xi_hat, dtype=float)
    if xi_hat.shape != (model.order,):
        raise DataError(f"state has shape {xi_hat.shape}, expected ({model.order},)")
    y_hat = float(model.C[0] @ xi_hat) + model.e
    residual = y_hat - float(y)
    xi_next = model.A @ xi_hat + model.d + model.B @ np.asarray(u, dtype=float) - spec.gain * residual
    return xi_next, InfoVector(xi_hat=xi_hat, y_hat=y_hat, residual=residual)


@dataclass(frozen=True)
class BankOutput:
    """Struct-of-arrays record of a full bank run.

    ``xi_hat`` is ``T x N x v``, ``y_hat`` and ``residuals`` are ``T x N``;
    column ``j`` depends only on observer ``j``.
    """

    xi_hat: np.ndarray
    y_hat: np.ndarray
    residuals: np.ndarray

    def __post_init__(self):
        for name in ("xi_hat", "y_hat", "residuals"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def sample_count(self) -> int:
        return self.y_hat.shape[0]

    @property
    def bank_size(self) -> int:
        return self.y_hat.shape[1]

    def info(self, k: int, j: int) -> InfoVector:
        return InfoVector(
            xi_hat=self.xi_hat[k, j],
            y_hat=float(self.y_hat[k, j]),
            residual=float(self.residuals[k, j]),
        )


@dataclass(frozen=True)
class ObserverBank:
    """Aligned lists of state-space models and their designed observers."""

    models: tuple[StateSpaceModel, ...]
    specs: tuple[ObserverSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "specs", tuple(self.specs))
        if len(self.models) != len(self.specs):
            raise ConfigError(
                f"{len(self.models)} models vs {len(self.specs)} observer specs"
            )
        if not self.models:
            raise ConfigError("empty observer bank")
        orders = {m.order for m in self.models}
        inputs = {m.n_u for m in self.models}
        if len(orders) != 1 or len(inputs) != 1:
            raise ConfigError("all bank members must share state and input dimensions")

    @property
    def size(self) -> int:
        return len(self.models)

    @property
    def order(self) -> int:
        return self.models[0].order

    @property
    def n_u(self) -> int:
        return self.models[0].n_u


def run_bank(bank: ObserverBank, ds: TimeSeriesDataset) -> BankOutput:
    """Run every observer over the dataset from a zero initial state.

    The recursion is strictly sequential in time but vectorized across the
    bank.  Raises :class:`NumericalError` naming the first diverging
    observer if a state stops being finite.
    """
    if ds.n_u != bank.n_u:
        raise DataError(f"dataset has n_u={ds.n_u}, bank expects {bank.n_u}")
    N, v = bank.size, bank.order
    A = np.stack([m.A for m in bank.models])  # N x v x v
    B = np.stack([m.B for m in bank.models])  # N x v x n_u
    d = np.stack([m.d for m in bank.models])  # N x v
    e = np.array([m.e for m in bank.models])  # N
    L = np.stack([s.gain for s in bank.specs])  # N x v
    T = ds.sample_count
    u, y = ds.u, ds.y[:, 0]
    xi = np.zeros((N, v))
    xi_out = np.empty((T, N, v))
    yhat_out = np.empty((T, N))
    for k in range(T):
        xi_out[k] = xi
        y_hat = xi[:, -1] + e
        yhat_out[k] = y_hat
        resid = y_hat - y[k]
        if not np.isfinite(resid).all():
            j = int(np.nonzero(~np.isfinite(resid))[0][0])
            raise NumericalError(f"observer {j} diverged at step {k}")
        xi = (
            np.einsum("nij,nj->ni", A, xi)
            + d
            + B @ u[k]
            - L * resid[:, None]
        )
    return BankOutput(xi_hat=xi_out, y_hat=yhat_out, residuals=yhat_out - y[:, None])
