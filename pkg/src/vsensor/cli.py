"""Command-line front end.

Subcommands::

    vsensor generate <benchmark> --out ds.csv --seed 0 --samples 25000
    vsensor train --data ds.csv --config cfg.json --out sensor.json
    vsensor eval --sensor sensor.json --data test.csv --out report.json \
                 --estimates est.csv
    vsensor experiment --spec exp.json --out results/
    vsensor ekf-baseline --data ds.csv --q 1e-8 --r 1e-3 --out est.csv

Exit codes: 0 on success, 2 for configuration errors, 3 for data errors,
4 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import benchmarks, dataset, pipeline
from .errors import ConfigError, DataError, NumericalError

BENCHMARKS = ("drift", "cosine", "switching", "battery")


def _load_battery_coeffs(path):
    if path is None:
        return None
    with open(path, encoding="utf-8") as fh:
        return benchmarks.BatteryCoefficients.from_json_dict(json.load(fh))


def _cmd_generate(args) -> int:
    ds = pipeline.generate_benchmark(
        args.benchmark,
        args.samples,
        args.seed,
        battery_coeffs=_load_battery_coeffs(args.battery_coeffs),
        cosine_beta=args.beta,
    )
    if args.sigma > 0:
        # noise std is relative to each channel's own std, matching the
        # normalize -> corrupt -> denormalize order used in experiments
        stats = dataset.fit_normalizer(ds)
        noisy = dataset.add_measurement_noise(
            dataset.normalize(ds, stats), args.sigma, args.seed + 1
        )
        ds = dataset.denormalize(noisy, stats)
    dataset.save_csv(ds, args.out)
    print(f"wrote {ds.sample_count} samples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        cfg = pipeline.SensorConfig.from_dict(json.load(fh))
    ds = dataset.load_csv(args.data)
    sensor = pipeline.synthesize_sensor(ds, cfg)
    pipeline.save_bundle(sensor, args.out)
    if args.dump_features:
        from .features import build_feature_matrix, save_feature_csv
        from .observers import run_bank

        ds_n = dataset.normalize(ds, sensor.stats)
        X, targets = build_feature_matrix(
            run_bank(sensor.bank, ds_n), ds_n, sensor.feature_config
        )
        save_feature_csv(args.dump_features, X, targets)
    print(f"trained {cfg.predictor} sensor on {ds.sample_count} samples -> {args.out}")
    return 0


def _write_estimates(path, ds, estimates, warmup):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["k"]
        header += [f"rho{i}" for i in range(ds.n_rho)]
        header += [f"rho_hat{i}" for i in range(estimates.shape[1])]
        writer.writerow(header)
        for i, row in enumerate(estimates):
            k = warmup + i
            writer.writerow(
                [k]
                + [format(v, ".17g") for v in ds.rho[k]]
                + [format(v, ".17g") for v in row]
            )


def _cmd_eval(args) -> int:
    sensor = pipeline.load_bundle(args.sensor)
    ds = dataset.load_csv(args.data)
    report, estimates = pipeline.evaluate_sensor(sensor, ds)
    doc = report.to_dict()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
    if args.estimates:
        _write_estimates(args.estimates, ds, estimates, sensor.warmup)
    print(f"FIT={report.fit:.4f} NRMSE={report.nrmse:.4f}")
    if report.per_mode_f1 is not None:
        print("per-mode F1: " + " ".join(f"{v:.4f}" for v in report.per_mode_f1))
    return 0


def format_report_table(result: dict) -> str:
    lines = [f"{'setting':>22} {'predictor':>9} {'FIT':>15} {'NRMSE':>15}"]
    for s in result["settings"]:
        agg = s["aggregate"]
        label = "-" if s["sweep_value"] is None else f"{s['sweep_field']}={s['sweep_value']}"
        fit = f"{agg['fit_mean']:.3f} ({agg['fit_std']:.3f})"
        nrmse = f"{agg['nrmse_mean']:.3f} ({agg['nrmse_std']:.3f})"
        lines.append(f"{label:>22} {s['predictor']:>9} {fit:>15} {nrmse:>15}")
    return "\n".join(lines)


def _cmd_experiment(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        spec = json.load(fh)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    progress = print if args.verbose else None
    result = pipeline.run_experiment(spec, progress=progress)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(result, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(format_report_table(result))
    print(f"full report: {out_dir / 'report.json'}")
    return 0


def _parse_q(text: str) -> np.ndarray:
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 1:
        return parts[0] * np.eye(3)
    if len(parts) == 3:
        return np.diag(parts)
    raise ConfigError("--q takes one value (isotropic) or three (diagonal)")


def _cmd_ekf(args) -> int:
    ds = dataset.load_csv(args.data)
    coeffs = _load_battery_coeffs(args.coeffs) or benchmarks.DEFAULT_BATTERY_COEFFS
    cfg = benchmarks.EkfConfig(Q=_parse_q(args.q), R=args.r, P0=args.p0 * np.eye(3))
    estimate = benchmarks.ekf_battery(ds, cfg, coeffs)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "rho0", "soc_hat"])
        for k in range(ds.sample_count):
            writer.writerow(
                [k, format(ds.rho[k, 0], ".17g"), format(estimate[k], ".17g")]
            )
    from .metrics import fit_score

    print(f"EKF FIT={fit_score(ds.rho[:, 0], estimate):.4f} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vsensor", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a benchmark dataset CSV")
    p.add_argument("benchmark", choices=BENCHMARKS)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", "--T", dest="samples", type=int, default=25_000)
    p.add_argument("--sigma", type=float, default=0.0,
                   help="relative measurement-noise std to add (default: none)")
    p.add_argument("--beta", type=float, default=200.0, help="cosine-law period scale")
    p.add_argument("--battery-coeffs", default=None, help="JSON coefficient overrides")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="synthesize a sensor from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True, help="SensorConfig JSON file")
    p.add_argument("--out", required=True, help="bundle path to write")
    p.add_argument("--dump-features", default=None,
                   help="debug: also write the training feature matrix CSV here")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a sensor bundle on a dataset")
    p.add_argument("--sensor", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="report JSON path")
    p.add_argument("--estimates", default=None, help="estimate CSV path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("experiment", help="run a multi-run experiment spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("ekf-baseline", help="model-based EKF on a battery record")
    p.add_argument("--data", required=True)
    p.add_argument("--q", required=True,
                   help="process covariance: one value (Q = q I) or three diagonal values")
    p.add_argument("--r", type=float, required=True, help="measurement covariance")
    p.add_argument("--p0", type=float, default=1e-4, help="initial covariance scale")
    p.add_argument("--out", required=True)
    p.add_argument("--coeffs", default=None, help="JSON coefficient overrides")
    p.set_defaults(func=_cmd_ekf)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
