#!/usr/bin/env python3
"""Battery state-of-charge demo: virtual sensor vs. model-based EKF.

Generates one long charge/discharge record, trains the data-driven sensor
on it, then runs an EKF that knows the battery equations on a fresh noisy
test record, and prints both FIT scores.

    python scripts/battery_demo.py --train-samples 25000 --out soc.csv
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from vsensor.benchmarks import DEFAULT_BATTERY_COEFFS, EkfConfig, ekf_battery, simulate_battery
from vsensor.dataset import TimeSeriesDataset, add_measurement_noise, fit_normalizer, normalize
from vsensor.metrics import fit_score
from vsensor.pipeline import SensorConfig, evaluate_sensor, synthesize_sensor


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--train-samples", type=int, default=25_000)
    parser.add_argument("--test-samples", type=int, default=5_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--sigma", type=float, default=0.03)
    parser.add_argument("--out", default=None, help="CSV with truth and both estimates")
    args = parser.parse_args()

    coeffs = DEFAULT_BATTERY_COEFFS
    raw_train = simulate_battery(coeffs, args.train_samples, args.seed)
    raw_test = simulate_battery(coeffs, args.test_samples, args.seed + 1)

    stats = fit_normalizer(raw_train)
    train = add_measurement_noise(normalize(raw_train, stats), args.sigma, args.seed + 2)
    test = add_measurement_noise(normalize(raw_test, stats), args.sigma, args.seed + 3)

    cfg = SensorConfig(predictor="mlp", observer="kalman", observer_param=0.1, seed=args.seed)
    sensor = synthesize_sensor(train, cfg)
    report, estimates = evaluate_sensor(sensor, test)
    print(f"virtual sensor: FIT={report.fit:.3f} NRMSE={report.nrmse:.3f}")

    # the EKF sees raw units with the same relative noise level on y
    rng = np.random.default_rng(args.seed + 4)
    noisy_raw = TimeSeriesDataset(
        u=raw_test.u,
        y=raw_test.y + args.sigma * raw_test.y.std() * rng.standard_normal(raw_test.y.shape),
        rho=raw_test.rho,
    )
    ekf_cfg = EkfConfig(Q=np.diag([1e-3, 1e-9, 1e-9]), R=1e-4, P0=1e-6 * np.eye(3))
    ekf_soc = ekf_battery(noisy_raw, ekf_cfg, coeffs)
    print(f"EKF baseline:   FIT={fit_score(raw_test.rho[:, 0], ekf_soc):.3f}")

    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "soc", "sensor_estimate", "ekf_estimate"])
            offset = sensor.warmup
            for i, est in enumerate(estimates[:, 0]):
                k = offset + i
                writer.writerow([k, raw_test.rho[k, 0], est, ekf_soc[k]])
        print(f"series written to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
