"""Acceptance suite: full multi-run reproduction of the headline experiments.

Every criterion trains and scores real sensors with the 10-run protocol
(fresh data realizations per run, noise applied after normalization), so a
complete pass takes tens of minutes.  Each test prints one line:

    [PASS|FAIL] criterion <n> -- <name>: <numbers>

Run with ``pytest tests/test_acceptance.py -v -s`` (or ``-m acceptance``).
"""

import time

import numpy as np
import pytest

from vsensor.arx import arx_to_statespace, fit_arx_ls, simulate_arx
from vsensor.benchmarks import (
    DEFAULT_BATTERY_COEFFS,
    EkfConfig,
    SWITCHING_MODES,
    ekf_battery,
    simulate_battery,
)
from vsensor.dataset import (
    TimeSeriesDataset,
    add_measurement_noise,
    denormalize,
    fit_normalizer,
    normalize,
)
from vsensor.observers import place_poles, riccati_residual, solve_stationary_covariance
from vsensor.pipeline import (
    SensorConfig,
    derive_int_seed,
    derive_seed,
    evaluate_sensor,
    generate_benchmark,
    load_bundle,
    save_bundle,
    synthesize_sensor,
)
from vsensor.predictors import _mlp_loss_and_grads

from test_arx import gamma_from_roots

pytestmark = pytest.mark.acceptance

N_RUNS = 10
TRAIN_SAMPLES = 25_000
TEST_SAMPLES = 5_000
SIGMA = 0.03
BASE_SEED = 0


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


def in_band(value: float, center: float, half_width: float) -> bool:
    return center - half_width <= value <= center + half_width


def prepared_run(benchmark: str, r: int, extra_tests=()):
    """Generate, normalize, and noise-corrupt one run's train/test records."""
    raw_train = generate_benchmark(benchmark, TRAIN_SAMPLES, derive_seed(BASE_SEED, "train-gen", r))
    raw_test = generate_benchmark(benchmark, TEST_SAMPLES, derive_seed(BASE_SEED, "test-gen", r))
    stats = fit_normalizer(raw_train)
    train = add_measurement_noise(
        normalize(raw_train, stats), SIGMA, derive_seed(BASE_SEED, "train-noise", r)
    )
    test = add_measurement_noise(
        normalize(raw_test, stats), SIGMA, derive_seed(BASE_SEED, "test-noise", r)
    )
    extras = []
    for name in extra_tests:
        raw = generate_benchmark(name, TEST_SAMPLES, derive_seed(BASE_SEED, f"{name}-gen", r))
        extras.append(
            add_measurement_noise(
                normalize(raw, stats), SIGMA, derive_seed(BASE_SEED, f"{name}-noise", r)
            )
        )
    return train, test, extras


@pytest.fixture(scope="module")
def reference_runs():
    """10 shared runs of the reference drift setup, all predictors + maps.

    The identity-map sensor and the cosine-law evaluation piggyback on the
    shared data and segmentation tree, but their time is booked separately:
    the runtime target covers the reference experiment itself.
    """
    out = {k: [] for k in ("dtr", "rfr", "mlp", "mlp_identity", "mlp_cross")}
    reference_seconds = 0.0
    for r in range(N_RUNS):
        started = time.perf_counter()
        train, test, (cosine_test,) = prepared_run("drift", r, extra_tests=("cosine",))
        seed = derive_int_seed(BASE_SEED, "model", r)
        tree = None
        for pred in ("dtr", "rfr", "mlp"):
            cfg = SensorConfig(predictor=pred, fe_map="compressed", seed=seed)
            sensor = synthesize_sensor(train, cfg, tree=tree)
            tree = sensor.tree
            rep, _ = evaluate_sensor(sensor, test)
            out[pred].append(rep.fit)
            if pred == "mlp":
                reference_seconds += time.perf_counter() - started
                cross, _ = evaluate_sensor(sensor, cosine_test)
                out["mlp_cross"].append(cross.fit)
        cfg = SensorConfig(predictor="mlp", fe_map="identity", seed=seed)
        sensor = synthesize_sensor(train, cfg, tree=tree)
        rep, _ = evaluate_sensor(sensor, test)
        out["mlp_identity"].append(rep.fit)
    out["seconds"] = reference_seconds
    return out


def test_criterion_1_reference_reproduction(reference_runs):
    bands = {"dtr": (0.716, 0.07), "rfr": (0.771, 0.06), "mlp": (0.781, 0.06)}
    means = {k: float(np.mean(reference_runs[k])) for k in bands}
    ok = all(in_band(means[k], *bands[k]) for k in bands)
    runtime_ok = reference_runs["seconds"] < 15 * 60
    report(
        "criterion 1 -- reference setup",
        ok and runtime_ok,
        " ".join(f"{k}={means[k]:.3f} (target {c}+-{w})" for k, (c, w) in bands.items())
        + f" runtime={reference_runs['seconds']:.0f}s",
    )


def test_criterion_2_identity_map_ordering(reference_runs):
    identity = float(np.mean(reference_runs["mlp_identity"]))
    compressed = float(np.mean(reference_runs["mlp"]))
    ok = identity >= compressed and in_band(identity, 0.820, 0.05)
    report(
        "criterion 2 -- identity FE map",
        ok,
        f"identity={identity:.3f} (target 0.820+-0.05) vs compressed={compressed:.3f}",
    )


@pytest.fixture(scope="module")
def observer_sweep_runs():
    """10 shared runs, RFR, poles z in {0, .4, .8} and KF lambdas {.1, 1, 10}."""
    poles = [0.0, 0.4, 0.8]
    lams = [0.1, 1.0, 10.0]
    fits = {("pole", z): [] for z in poles}
    fits.update({("kalman", lam): [] for lam in lams})
    for r in range(N_RUNS):
        train, test, _ = prepared_run("drift", r)
        seed = derive_int_seed(BASE_SEED, "model", r)
        tree = None
        for z in poles:
            cfg = SensorConfig(predictor="rfr", observer="pole", observer_param=z, seed=seed)
            sensor = synthesize_sensor(train, cfg, tree=tree)
            tree = sensor.tree
            rep, _ = evaluate_sensor(sensor, test)
            fits[("pole", z)].append(rep.fit)
        for lam in lams:
            cfg = SensorConfig(predictor="rfr", observer="kalman", observer_param=lam, seed=seed)
            sensor = synthesize_sensor(train, cfg, tree=tree)
            rep, _ = evaluate_sensor(sensor, test)
            fits[("kalman", lam)].append(rep.fit)
    return {k: float(np.mean(v)) for k, v in fits.items()}


def test_criterion_3_observer_speed_trend(observer_sweep_runs):
    f = observer_sweep_runs
    pole_means = [f[("pole", z)] for z in (0.0, 0.4, 0.8)]
    targets = [0.771, 0.698, 0.467]
    ok = all(in_band(m, t, 0.10) for m, t in zip(pole_means, targets))
    ok = ok and pole_means[0] > pole_means[1] > pole_means[2]
    kf_means = [f[("kalman", lam)] for lam in (0.1, 1.0, 10.0)]
    ok = ok and all(in_band(m, 0.77, 0.06) for m in kf_means)
    report(
        "criterion 3 -- observer speed",
        ok,
        "poles " + "/".join(f"{m:.3f}" for m in pole_means)
        + " (targets 0.771/0.698/0.467 +-0.10), KF "
        + "/".join(f"{m:.3f}" for m in kf_means)
        + " (target 0.77+-0.06)",
    )


@pytest.fixture(scope="module")
def model_count_runs():
    counts = [2, 3, 5, 7]
    fits = {n: [] for n in counts}
    for r in range(N_RUNS):
        train, test, _ = prepared_run("drift", r)
        seed = derive_int_seed(BASE_SEED, "model", r)
        for n in counts:
            cfg = SensorConfig(predictor="rfr", n_models=n, seed=seed)
            sensor = synthesize_sensor(train, cfg)
            rep, _ = evaluate_sensor(sensor, test)
            fits[n].append(rep.fit)
    return {n: float(np.mean(v)) for n, v in fits.items()}


def test_criterion_4_model_count_saturation(model_count_runs):
    targets = {2: 0.685, 3: 0.766, 5: 0.771, 7: 0.777}
    ok = all(in_band(model_count_runs[n], t, 0.08) for n, t in targets.items())
    gap = model_count_runs[3] - model_count_runs[2]
    ok = ok and gap >= 0.04
    report(
        "criterion 4 -- model count",
        ok,
        " ".join(f"N={n}:{model_count_runs[n]:.3f}(target {t})" for n, t in targets.items())
        + f" gap(3-2)={gap:.3f}",
    )


@pytest.fixture(scope="module")
def noise_sweep_runs():
    sigmas = [0.01, 0.03, 0.06]
    fits = {s: [] for s in sigmas}
    for r in range(N_RUNS):
        raw_train = generate_benchmark("drift", TRAIN_SAMPLES, derive_seed(BASE_SEED, "train-gen", r))
        raw_test = generate_benchmark("drift", TEST_SAMPLES, derive_seed(BASE_SEED, "test-gen", r))
        stats = fit_normalizer(raw_train)
        train_n = normalize(raw_train, stats)
        test_n = normalize(raw_test, stats)
        seed = derive_int_seed(BASE_SEED, "model", r)
        for sigma in sigmas:
            train = add_measurement_noise(train_n, sigma, derive_seed(BASE_SEED, "train-noise", r))
            test = add_measurement_noise(test_n, sigma, derive_seed(BASE_SEED, "test-noise", r))
            cfg = SensorConfig(predictor="mlp", seed=seed)
            sensor = synthesize_sensor(train, cfg)
            rep, _ = evaluate_sensor(sensor, test)
            fits[sigma].append(rep.fit)
    return {s: float(np.mean(v)) for s, v in fits.items()}


def test_criterion_5_noise_sensitivity(noise_sweep_runs):
    targets = {0.01: 0.807, 0.03: 0.781, 0.06: 0.740}
    ok = all(in_band(noise_sweep_runs[s], t, 0.08) for s, t in targets.items())
    ok = ok and noise_sweep_runs[0.01] > noise_sweep_runs[0.03] > noise_sweep_runs[0.06]
    report(
        "criterion 5 -- noise sensitivity",
        ok,
        " ".join(f"s={s}:{noise_sweep_runs[s]:.3f}(target {t})" for s, t in targets.items()),
    )


def test_criterion_6_cross_law_generalization(reference_runs):
    cross = float(np.mean(reference_runs["mlp_cross"]))
    ok = in_band(cross, 0.834, 0.05)
    report(
        "criterion 6 -- drift-trained sensor on cosine-law data",
        ok,
        f"ANN FIT={cross:.3f} (target 0.834+-0.05)",
    )


@pytest.fixture(scope="module")
def switching_runs():
    out = {"rfr_fit": [], "rfc_fit": [], "rfc_f1": [], "rfr_f1": []}
    for r in range(N_RUNS):
        train, test, _ = prepared_run("switching", r)
        seed = derive_int_seed(BASE_SEED, "model", r)
        tree = None
        for pred in ("rfr", "rfc"):
            cfg = SensorConfig(
                predictor=pred, n_models=4, mode_set=SWITCHING_MODES, seed=seed
            )
            sensor = synthesize_sensor(train, cfg, tree=tree)
            tree = sensor.tree
            rep, _ = evaluate_sensor(sensor, test)
            out[f"{pred}_fit"].append(rep.fit)
            out[f"{pred}_f1"].append(np.asarray(rep.per_mode_f1))
    return out


def test_criterion_7_switching_mode_reconstruction(switching_runs):
    rfr_fit = float(np.mean(switching_runs["rfr_fit"]))
    rfc_fit = float(np.mean(switching_runs["rfc_fit"]))
    rfc_f1 = np.mean(switching_runs["rfc_f1"], axis=0)
    rfr_f1 = np.mean(switching_runs["rfr_f1"], axis=0)
    ok = in_band(rfr_fit, 0.942, 0.04) and in_band(rfc_fit, 0.945, 0.04)
    ok = ok and np.all(rfc_f1 >= 0.98) and np.all(rfr_f1 >= 0.98)
    report(
        "criterion 7 -- switching modes",
        ok,
        f"RFR FIT={rfr_fit:.3f} (target 0.942+-0.04), RFC FIT={rfc_fit:.3f} "
        f"(target 0.945+-0.04), RFC F1={np.min(rfc_f1):.3f}min, "
        f"RFR+mindist F1={np.min(rfr_f1):.3f}min (both >= 0.98)",
    )


def test_criterion_8_battery_properties():
    # data-driven sensor on the hidden state of charge
    raw_train = simulate_battery(DEFAULT_BATTERY_COEFFS, TRAIN_SAMPLES, derive_seed(BASE_SEED, "bat-train", 0))
    raw_test = simulate_battery(DEFAULT_BATTERY_COEFFS, TEST_SAMPLES, derive_seed(BASE_SEED, "bat-test", 0))
    stats = fit_normalizer(raw_train)
    train = add_measurement_noise(normalize(raw_train, stats), SIGMA, derive_seed(BASE_SEED, "bat-train-noise", 0))
    test = add_measurement_noise(normalize(raw_test, stats), SIGMA, derive_seed(BASE_SEED, "bat-test-noise", 0))
    cfg = SensorConfig(predictor="mlp", observer="kalman", observer_param=0.1, seed=7)
    sensor = synthesize_sensor(train, cfg)
    rep, _ = evaluate_sensor(sensor, test)
    sensor_ok = rep.fit >= 0.7

    # matched-initialization EKF on noiseless data
    short = simulate_battery(DEFAULT_BATTERY_COEFFS, 500, derive_seed(BASE_SEED, "bat-ekf", 0))
    ekf_cfg = EkfConfig(Q=1e-12 * np.eye(3), R=1e-4, P0=1e-12 * np.eye(3))
    estimate = ekf_battery(short, ekf_cfg, DEFAULT_BATTERY_COEFFS)
    ekf_err = float(np.max(np.abs(estimate - short.rho[:, 0])))
    ekf_ok = ekf_err < 1e-3

    # RK4 order on the frozen-coefficient linear branch
    from test_benchmarks import frozen_coeffs
    from vsensor.benchmarks import rk4_step

    coeffs = frozen_coeffs()
    R, C = coeffs.r_ts(0.5), coeffs.c_ts(0.5)
    current, x0 = 0.4, np.array([0.8, 0.3, 0.1])
    analytic = lambda t: (x0[1] - current * R) * np.exp(-t / (R * C)) + current * R
    e1 = abs(rk4_step(x0, current, 40.0, coeffs)[1] - analytic(40.0))
    e2 = abs(rk4_step(x0, current, 20.0, coeffs)[1] - analytic(20.0))
    order = float(np.log2(e1 / e2))
    order_ok = order >= 4.5

    report(
        "criterion 8 -- battery",
        sensor_ok and ekf_ok and order_ok,
        f"sensor FIT={rep.fit:.3f} (>=0.7), EKF max err={ekf_err:.2e} (<1e-3), "
        f"RK4 order={order:.2f} (>=4.5)",
    )


def test_criterion_9_numerical_property_suite():
    import math

    rng = np.random.default_rng(123)
    checks = {}

    # deadbeat nilpotency and pole placement
    nilpotency = 0.0
    polecoef = 0.0
    for i in range(5):
        M = int(rng.integers(2, 6))
        coeffs = gamma_from_roots(rng.uniform(-0.85, 0.85, M), rng.standard_normal((M, 2)), c=rng.normal())
        model = arx_to_statespace(coeffs)
        spec = place_poles(model, 0.0)
        closed = model.A - np.outer(spec.gain, model.C[0])
        nilpotency = max(nilpotency, np.abs(np.linalg.matrix_power(closed, M)).max())
        z = 0.6
        spec = place_poles(model, z)
        closed = model.A - np.outer(spec.gain, model.C[0])
        # solved eigenvalues compared in their well-conditioned direction
        got = np.poly(np.linalg.eigvals(closed))
        want = np.array([math.comb(M, i) * (-z) ** i for i in range(M + 1)])
        polecoef = max(polecoef, np.abs(got - want).max())
    checks["deadbeat nilpotency"] = (nilpotency, nilpotency < 1e-9)
    checks["pole placement"] = (polecoef, polecoef < 1e-9)

    # Riccati residual
    dare = 0.0
    for i in range(5):
        M = int(rng.integers(1, 6))
        coeffs = gamma_from_roots(rng.uniform(-0.85, 0.85, M), rng.standard_normal((M, 1)), c=0.0)
        model = arx_to_statespace(coeffs)
        for lam in (0.1, 1.0, 10.0):
            P = solve_stationary_covariance(model, lam)
            dare = max(dare, riccati_residual(model, lam, P))
    checks["DARE residual"] = (dare, dare < 1e-10)

    # noiseless ARX recovery
    truth = gamma_from_roots([0.5, -0.3, 0.2], rng.standard_normal((3, 2)), c=0.3)
    u = rng.standard_normal((800, 2))
    y = simulate_arx(truth, u)
    ds = TimeSeriesDataset(u=u, y=y[:, None], rho=np.zeros((800, 1)))
    recovery = np.abs(fit_arx_ls(ds, 3).gamma - truth.gamma).max()
    checks["ARX recovery"] = (recovery, recovery < 1e-8)

    # simulation equivalence over 200 steps
    equiv = 0.0
    for i in range(3):
        M = int(rng.integers(1, 6))
        coeffs = gamma_from_roots(rng.uniform(-0.8, 0.8, M), rng.standard_normal((M, 2)), c=rng.normal())
        model = arx_to_statespace(coeffs)
        u = rng.standard_normal((200, 2))
        equiv = max(
            equiv,
            np.abs(simulate_arx(coeffs, u) - model.simulate(u, x0=model.zero_history_state())).max(),
        )
    checks["ARX<->state-space"] = (equiv, equiv < 1e-10)

    # MLP gradient vs central differences
    sizes = [3, 5, 5, 2]
    weights = [rng.standard_normal((sizes[i], sizes[i + 1])) for i in range(3)]
    biases = [0.3 + 0.1 * rng.standard_normal(sizes[i + 1]) for i in range(3)]
    X = rng.standard_normal((4, 3)) + 0.5
    Y = rng.standard_normal((4, 2))
    _, gw, gb = _mlp_loss_and_grads(weights, biases, X, Y)

    def loss_at():
        z = np.maximum(X @ weights[0] + biases[0], 0.0)
        z = np.maximum(z @ weights[1] + biases[1], 0.0)
        return float(np.mean((z @ weights[2] + biases[2] - Y) ** 2))

    grad_err = 0.0
    eps = 1e-6
    for layer in range(3):
        for arr, grads in ((weights, gw), (biases, gb)):
            flat = arr[layer].reshape(-1)
            gflat = grads[layer].reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + eps
                hi = loss_at()
                flat[idx] = orig - eps
                lo = loss_at()
                flat[idx] = orig
                fd = (hi - lo) / (2 * eps)
                denom = max(abs(fd), abs(gflat[idx]), 1e-8)
                grad_err = max(grad_err, abs(fd - gflat[idx]) / denom)
    checks["MLP gradient"] = (grad_err, grad_err < 1e-4)

    # normalization round trip
    ds = generate_benchmark("drift", 2000, 99)
    stats = fit_normalizer(ds)
    back = denormalize(normalize(ds, stats), stats)
    norm_err = max(np.abs(back.u - ds.u).max(), np.abs(back.y - ds.y).max())
    checks["normalization round trip"] = (norm_err, norm_err < 1e-12)

    # bundle round trip and causality (exact)
    import tempfile
    from pathlib import Path

    train = generate_benchmark("drift", 3000, 98)
    test = generate_benchmark("drift", 1000, 97)
    sensor = synthesize_sensor(train, SensorConfig(predictor="rfr", n_trees=3, seed=1,
                                                   arx_order=3, n_models=3, window=4))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "sensor.json"
        save_bundle(sensor, path)
        loaded = load_bundle(path)
    _, before = evaluate_sensor(sensor, test)
    _, after = evaluate_sensor(loaded, test)
    bundle_exact = np.array_equal(before, after)
    checks["bundle round trip"] = (0.0 if bundle_exact else 1.0, bundle_exact)

    prefix = sensor.estimate(
        TimeSeriesDataset(u=test.u[:600], y=test.y[:600], rho=test.rho[:600])
    )
    causal_exact = np.array_equal(prefix, before[: len(prefix)])
    checks["causality prefix"] = (0.0 if causal_exact else 1.0, causal_exact)

    ok = all(passed for _, passed in checks.values())
    detail = "; ".join(f"{name}={value:.2e}" for name, (value, _) in checks.items())
    report("criterion 9 -- numerical properties", ok, detail)
