#!/usr/bin/env python3
"""Reproduce the reference drift-benchmark experiment.

Trains all three predictor kinds on shared 25k-sample realizations and
reports mean/std FIT and NRMSE over the requested number of runs.  With
default settings this takes a few minutes per run triple.

    python scripts/reproduce_reference.py --runs 10 --out reference.json
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from vsensor.cli import format_report_table
from vsensor.pipeline import run_experiment


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--runs", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--train-samples", type=int, default=25_000)
    parser.add_argument("--sigma", type=float, default=0.03)
    parser.add_argument("--fe-map", default="compressed", choices=["compressed", "identity"])
    parser.add_argument("--out", default=None, help="write the full report JSON here")
    args = parser.parse_args()

    spec = {
        "benchmark": "drift",
        "train_samples": args.train_samples,
        "test_samples": 5_000,
        "noise_sigma": args.sigma,
        "n_runs": args.runs,
        "base_seed": args.seed,
        "config": {"fe_map": args.fe_map},
        "predictors": ["dtr", "rfr", "mlp"],
    }
    result = run_experiment(spec, progress=print)
    print()
    print(format_report_table(result))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result, fh, sort_keys=True, indent=1)
        print(f"report written to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
