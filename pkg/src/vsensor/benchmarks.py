"""Benchmark systems that generate datasets, plus a model-based EKF baseline.

Three generators are provided, all opaque to the estimation pipeline (it
only ever sees the emitted :class:`~vsensor.dataset.TimeSeriesDataset`):

* a fifth-order nonlinear plant whose input gain and output gain are
  modulated by a scalar parameter ``rho`` that drifts, follows a slow
  cosine, or switches between four levels;
* the same plant restricted to its linear regime for mode-reconstruction
  experiments;
* a third-order lithium-ion battery model integrated with classical RK4,
  with the state of charge as the hidden target.

All generators are deterministic given their seed.  Measurement noise is
*not* added here: the experiment driver corrupts signals after
normalization so noise levels are relative to unit-variance data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .dataset import TimeSeriesDataset
from .errors import ConfigError, DataError, NumericalError

__all__ = [
    "SYNTH_H",
    "SYNTH_F",
    "DriftLaw",
    "CosineLaw",
    "SwitchingLaw",
    "ConstantLaw",
    "SWITCHING_MODES",
    "SyntheticConfig",
    "rho_drift_step",
    "simulate_synthetic",
    "simulate_switching",
    "BatteryCoefficients",
    "DEFAULT_BATTERY_COEFFS",
    "battery_output",
    "rk4_step",
    "simulate_battery",
    "EkfConfig",
    "ekf_battery",
    "rho_law_from_dict",
]

SYNTH_H = np.array(
    [
        [0.0, 0.1, 0.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
        [-0.00909, 0.0329, 0.29013, -1.05376, 1.69967],
    ]
)
SYNTH_H.setflags(write=False)

SYNTH_F = np.array(
    [
        [-0.71985, -0.1985],
        [0.57661, 0.917661],
        [1.68733, -0.68733],
        [-2.14341, 2.94341],
        [1.0, 1.0],
    ]
)
SYNTH_F.setflags(write=False)

SWITCHING_MODES = (0.0, 0.5, 1.0, 1.5)

RHO_BOUND = 0.95


@dataclass(frozen=True)
class DriftLaw:
    """Slow stochastic drift: ``p = 0.999 rho + 0.03 w``, halved out of bounds."""

    kind: str = field(default="drift", init=False)


@dataclass(frozen=True)
class CosineLaw:
    """Deterministic slow modulation ``cos(k / beta)``.

    The same out-of-bounds halving rule as the drift law applies, so the
    signal folds to half amplitude near the cosine peaks.
    """

    beta: float = 200.0
    kind: str = field(default="cosine", init=False)


@dataclass(frozen=True)
class SwitchingLaw:
    """Four equal phases over the record: ``rho_k = 0.5 * floor(4 k / T)``."""

    kind: str = field(default="switching", init=False)


@dataclass(frozen=True)
class ConstantLaw:
    """Pinned constant parameter, mainly for diagnostics and oracles."""

    value: float = 0.0
    kind: str = field(default="constant", init=False)


RhoLaw = Union[DriftLaw, CosineLaw, SwitchingLaw, ConstantLaw]


def rho_law_from_dict(doc: dict) -> RhoLaw:
    kind = doc.get("kind")
    if kind == "drift":
        return DriftLaw()
    if kind == "cosine":
        return CosineLaw(beta=float(doc.get("beta", 200.0)))
    if kind == "switching":
        return SwitchingLaw()
    if kind == "constant":
        return ConstantLaw(value=float(doc.get("value", 0.0)))
    raise ConfigError(f"unknown rho law {kind!r}")


def rho_law_to_dict(law: RhoLaw) -> dict:
    doc = {"kind": law.kind}
    if isinstance(law, CosineLaw):
        doc["beta"] = law.beta
    if isinstance(law, ConstantLaw):
        doc["value"] = law.value
    return doc


@dataclass(frozen=True)
class SyntheticConfig:
    """Setup of the fifth-order benchmark plant.

    ``noise_sigma`` is carried for the experiment driver; the generator
    itself always emits noise-free records.  The plant matrices are fixed
    module constants exposed as properties.
    """

    T: int
    seed: int
    alpha: float = 1.0
    rho_law: RhoLaw = DriftLaw()
    noise_sigma: float = 0.03

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError(f"T must be positive, got {self.T}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    @property
    def H(self) -> np.ndarray:
        return SYNTH_H

    @property
    def F(self) -> np.ndarray:
        return SYNTH_F


def _saturate(p: float) -> float:
    return p if abs(p) <= RHO_BOUND else p / 2.0


def rho_drift_step(rho: float, rng: np.random.Generator) -> float:
    """One step of the drift law; the result stays within ``[-0.95, 0.95]``."""
    p = 0.999 * rho + 0.03 * rng.standard_normal()
    return _saturate(p)


def _rho_sequence(law: RhoLaw, T: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(law, DriftLaw):
        rho = np.empty(T)
        r = rng.uniform(-0.5, 0.5)
        for k in range(T):
            rho[k] = r
            r = rho_drift_step(r, rng)
        return rho
    if isinstance(law, CosineLaw):
        p = np.cos(np.arange(T) / law.beta)
        return np.where(np.abs(p) <= RHO_BOUND, p, p / 2.0)
    if isinstance(law, SwitchingLaw):
        return 0.5 * np.floor(4.0 * np.arange(T) / T)
    if isinstance(law, ConstantLaw):
        return np.full(T, law.value)
    raise ConfigError(f"unknown rho law {law!r}")


def simulate_synthetic(cfg: SyntheticConfig) -> TimeSeriesDataset:
    """Drive the plant with unit white-noise inputs from a zero initial state.

    The excitation is drawn first, then the parameter trajectory, so the
    record is reproducible from the seed alone.
    """
    rng = np.random.default_rng(cfg.seed)
    T = cfg.T
    u = rng.standard_normal((T, 2))
    rho = _rho_sequence(cfg.rho_law, T, rng)
    if np.any(rho <= -1.0):
        raise NumericalError("parameter trajectory left the admissible region")
    x = np.zeros(5)
    y = np.empty(T)
    gain = np.log(rho + 1.0)
    scale = -(1.0 + np.exp(rho))
    for k in range(T):
        y[k] = scale[k] * x[4]
        x = SYNTH_H @ x + (cfg.alpha / 2.0) * np.arctan(x) + gain[k] * (SYNTH_F @ u[k])
        if not np.isfinite(x).all():
            raise NumericalError(f"plant state diverged at step {k}")
    return TimeSeriesDataset(u=u, y=y[:, None], rho=rho[:, None])


def simulate_switching(cfg: SyntheticConfig) -> TimeSeriesDataset:
    """Mode-reconstruction record: linear regime, four-phase parameter sweep.

    Requires ``alpha = 0`` (the switching experiments run the plant in its
    linear regime) and records the mode signal noise-free.
    """
    if cfg.alpha != 0.0:
        raise ConfigError("switching records require alpha = 0")
    if not isinstance(cfg.rho_law, SwitchingLaw):
        raise ConfigError("switching records require the switching rho law")
    return simulate_synthetic(cfg)


# ---------------------------------------------------------------------------
# Battery model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BatteryCoefficients:
    """Coefficients of the third-order battery model.

    The sub-expressions are

        E0(s)   = -a1 exp(-a2 s) + a3 + a4 s - a5 s^2 + a6 s^3
        R_ts(s) = a7 exp(-a8 s) + a9
        R_tl(s) = a10 exp(-a11 s) + a12
        C_tl(s) = a14 exp(-a15 s) + a16
        C_ts(s) = a13 exp(-a17 s) + a18
        R_s(s)  = a19 exp(-a20 s) + a21

    with ``s`` the state of charge.  The slow branch's input term shares
    the fast-branch capacitance ``C_ts``.  The default values below are a
    physically plausible placeholder set (open-circuit voltage falling
    from about 4.2 V to 3.3 V over a discharge); real cells should load
    their own set from JSON via :meth:`from_json_dict`.
    """

    a: tuple[float, ...]
    capacity_coulomb: float
    sample_period: float = 5.0
    substeps: int = 10
    reset_threshold: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        if len(self.a) != 21:
            raise ConfigError(f"need exactly 21 coefficients, got {len(self.a)}")
        if self.capacity_coulomb <= 0:
            raise ConfigError("capacity must be positive")
        if self.sample_period <= 0 or self.substeps < 1:
            raise ConfigError("bad integration settings")
        soc = np.linspace(self.reset_threshold, 1.0, 64)
        for name, fn in (
            ("R_ts", self.r_ts),
            ("R_tl", self.r_tl),
            ("C_ts", self.c_ts),
            ("C_tl", self.c_tl),
            ("R_s", self.r_s),
        ):
            if np.any(fn(soc) <= 0):
                raise ConfigError(f"{name} must stay positive over the SoC range")

    def e0(self, s):
        a = self.a
        return -a[0] * np.exp(-a[1] * s) + a[2] + a[3] * s - a[4] * s**2 + a[5] * s**3

    def r_ts(self, s):
        return self.a[6] * np.exp(-self.a[7] * s) + self.a[8]

    def r_tl(self, s):
        return self.a[9] * np.exp(-self.a[10] * s) + self.a[11]

    def c_tl(self, s):
        return self.a[13] * np.exp(-self.a[14] * s) + self.a[15]

    def c_ts(self, s):
        return self.a[12] * np.exp(-self.a[16] * s) + self.a[17]

    def r_s(self, s):
        return self.a[18] * np.exp(-self.a[19] * s) + self.a[20]

    def to_json_dict(self) -> dict:
        doc = {f"a{i + 1}": self.a[i] for i in range(21)}
        doc["Cc"] = self.capacity_coulomb
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "BatteryCoefficients":
        try:
            a = tuple(float(doc[f"a{i + 1}"]) for i in range(21))
            cc = float(doc["Cc"])
        except KeyError as exc:
            raise DataError(f"battery coefficient file misses key {exc}") from None
        return cls(a=a, capacity_coulomb=cc)


DEFAULT_BATTERY_COEFFS = BatteryCoefficients(
    a=(
        0.4, 20.0, 3.43, 0.8, 0.5, 0.5,       # E0
        0.05, 25.0, 0.015,                     # R_ts
        0.08, 15.0, 0.025,                     # R_tl
        -200.0,                                # C_ts leading term (a13)
        -1000.0, 30.0, 4500.0,                 # C_tl (a14..a16)
        30.0, 800.0,                           # C_ts exponent / offset (a17, a18)
        0.04, 24.0, 0.02,                      # R_s
    ),
    capacity_coulomb=4500.0,
)


def battery_derivatives(state: np.ndarray, current: float, coeffs: BatteryCoefficients) -> np.ndarray:
    """Right-hand side of the battery ODEs; works on a state or a batch of states."""
    s = state[0]
    dx1 = -current / coeffs.capacity_coulomb
    dx2 = -state[1] / (coeffs.r_ts(s) * coeffs.c_ts(s)) + current / coeffs.c_ts(s)
    dx3 = -state[2] / (coeffs.r_tl(s) * coeffs.c_tl(s)) + current / coeffs.c_ts(s)
    if np.ndim(s) == 0:
        return np.array([dx1, dx2, dx3])
    return np.stack([np.broadcast_to(dx1, np.shape(s)), dx2, dx3])


def battery_output(state: np.ndarray, current: float, coeffs: BatteryCoefficients):
    """Terminal voltage for a state (or batch of states) under ``current``."""
    s = state[0]
    return coeffs.e0(s) - state[1] - state[2] - current * coeffs.r_s(s)


def _rk4_unchecked(state, current, dt, coeffs):
    k1 = battery_derivatives(state, current, coeffs)
    k2 = battery_derivatives(state + 0.5 * dt * k1, current, coeffs)
    k3 = battery_derivatives(state + 0.5 * dt * k2, current, coeffs)
    k4 = battery_derivatives(state + dt * k3, current, coeffs)
    return state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_step(
    state: np.ndarray, current: float, dt: float, coeffs: BatteryCoefficients
) -> np.ndarray:
    """One classical Runge-Kutta step with the current held constant.

    Guards the physical range of the state of charge; leaving ``(0, 1.001]``
    raises :class:`NumericalError`.
    """
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    out = _rk4_unchecked(np.asarray(state, dtype=float), current, coeffs=coeffs, dt=dt)
    soc = np.atleast_1d(out[0])
    if np.any(soc <= 0.0) or np.any(soc > 1.001):
        raise NumericalError(f"state of charge left (0, 1.001]: {soc}")
    return out


def _advance_sample(state, current, coeffs: BatteryCoefficients, check: bool = True):
    dt = coeffs.sample_period / coeffs.substeps
    step = rk4_step if check else _rk4_unchecked
    for _ in range(coeffs.substeps):
        state = step(state, current, dt, coeffs)
    return state


BATTERY_X0 = np.array([1.0, 0.0, 0.0])


def simulate_battery(
    coeffs: BatteryCoefficients, T: int, seed
) -> TimeSeriesDataset:
    """Discharge cycles under a rectified two-tone current plus uniform noise.

    The current over sampling step ``k`` is
    ``0.2 max{0, cos(k/100) + cos(k/37)} + U(0, 0.4)``.  Whenever the state
    of charge falls below the reset threshold the state returns to the
    fully charged initial condition, so one long record contains several
    full discharge sweeps.  Columns: ``u`` = current, ``y`` = terminal
    voltage, ``rho`` = state of charge.
    """
    if T < 1:
        raise ConfigError(f"T must be positive, got {T}")
    rng = np.random.default_rng(seed)
    steps = np.arange(T)
    current = 0.2 * np.maximum(0.0, np.cos(steps / 100.0) + np.cos(steps / 37.0))
    current = current + rng.uniform(0.0, 0.4, size=T)
    state = BATTERY_X0.copy()
    y = np.empty(T)
    soc = np.empty(T)
    for k in range(T):
        y[k] = battery_output(state, current[k], coeffs)
        soc[k] = state[0]
        state = _advance_sample(state, current[k], coeffs)
        if state[0] < coeffs.reset_threshold:
            state = BATTERY_X0.copy()
    return TimeSeriesDataset(u=current[:, None], y=y[:, None], rho=soc[:, None])


@dataclass(frozen=True)
class EkfConfig:
    """Covariances and initial condition of the model-based filter."""

    Q: np.ndarray
    R: float
    P0: np.ndarray
    x0: np.ndarray = field(default_factory=lambda: BATTERY_X0.copy())

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        P0 = np.array(self.P0, dtype=float)
        x0 = np.array(self.x0, dtype=float)
        for name, mat in (("Q", Q), ("P0", P0)):
            if mat.shape != (3, 3) or not np.allclose(mat, mat.T):
                raise ConfigError(f"{name} must be a symmetric 3x3 matrix")
            if np.any(np.linalg.eigvalsh(mat) < -1e-12):
                raise ConfigError(f"{name} must be positive semidefinite")
        if self.R <= 0:
            raise ConfigError(f"R must be positive, got {self.R}")
        if x0.shape != (3,):
            raise ConfigError("x0 must have 3 components")
        for name, mat in (("Q", Q), ("P0", P0), ("x0", x0)):
            mat.setflags(write=False)
            object.__setattr__(self, name, mat)
        object.__setattr__(self, "R", float(self.R))


_FD_REL_STEP = 1e-6
SOC_ESTIMATE_FLOOR = 1e-3


def _transition(state, current, coeffs):
    """Sample-period state transition used by both prediction and Jacobians."""
    return _advance_sample(state, current, coeffs, check=False)


def _transition_jacobian(state, current, coeffs):
    steps = _FD_REL_STEP * np.maximum(1.0, np.abs(state))
    # batch the 6 perturbed states and the nominal one through RK4 at once
    batch = np.tile(state[:, None], (1, 7))
    for j in range(3):
        batch[j, 2 * j] += steps[j]
        batch[j, 2 * j + 1] -= steps[j]
    out = _transition(batch, current, coeffs)
    F = np.empty((3, 3))
    for j in range(3):
        F[:, j] = (out[:, 2 * j] - out[:, 2 * j + 1]) / (2 * steps[j])
    return F, out[:, 6]


def _measurement_jacobian(state, current, coeffs):
    steps = _FD_REL_STEP * np.maximum(1.0, np.abs(state))
    H = np.empty(3)
    for j in range(3):
        plus = state.copy()
        minus = state.copy()
        plus[j] += steps[j]
        minus[j] -= steps[j]
        H[j] = (
            battery_output(plus, current, coeffs)
            - battery_output(minus, current, coeffs)
        ) / (2 * steps[j])
    return H


def ekf_battery(
    ds: TimeSeriesDataset, cfg: EkfConfig, coeffs: BatteryCoefficients
) -> np.ndarray:
    """Extended Kalman filter over the sampled battery model.

    Consumes raw (unnormalized) current/voltage records and returns the
    state-of-charge estimate per sample.  Jacobians come from central
    finite differences around the current estimate.
    """
    if ds.n_u != 1:
        raise DataError("battery records have a single current input")
    x = np.array(cfg.x0, dtype=float)
    P = np.array(cfg.P0, dtype=float)
    eye = np.eye(3)
    T = ds.sample_count
    estimate = np.empty(T)
    for k in range(T):
        current = float(ds.u[k, 0])
        H = _measurement_jacobian(x, current, coeffs)
        innov = float(ds.y[k, 0]) - float(battery_output(x, current, coeffs))
        S = float(H @ P @ H) + cfg.R
        K = (P @ H) / S
        x = x + K * innov
        # the estimate is a fraction of capacity; keep it evaluable
        x[0] = min(max(x[0], SOC_ESTIMATE_FLOOR), 1.0)
        P = (eye - np.outer(K, H)) @ P
        P = (P + P.T) / 2.0
        estimate[k] = x[0]
        F, x = _transition_jacobian(x, current, coeffs)
        x[0] = min(max(x[0], SOC_ESTIMATE_FLOOR), 1.0)
        P = F @ P @ F.T + cfg.Q
        P = (P + P.T) / 2.0
        try:
            np.linalg.cholesky(P + 1e-15 * eye)
        except np.linalg.LinAlgError:
            P = (P + P.T) / 2.0 + 1e-12 * eye
            try:
                np.linalg.cholesky(P)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(
                    f"filter covariance lost positive definiteness at step {k}"
                ) from exc
    return estimate
