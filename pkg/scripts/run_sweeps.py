#!/usr/bin/env python3
"""Run the hyper-parameter sweeps (observer settings, model count, noise).

Each named sweep repeats the full generate/train/test cycle with shared
per-run data, so the comparisons across settings are paired.

    python scripts/run_sweeps.py observer --runs 10 --out results/
    python scripts/run_sweeps.py models --runs 10
    python scripts/run_sweeps.py noise --runs 10
    python scripts/run_sweeps.py switching --runs 10
    python scripts/run_sweeps.py crosslaw --runs 10
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from vsensor.cli import format_report_table
from vsensor.pipeline import run_experiment

SWEEPS = {
    "observer": {
        "benchmark": "drift",
        "config": {"predictor": "rfr", "observer": "pole", "observer_param": 0.0},
        "sweep": {"field": "observer_param", "values": [0.0, 0.4, 0.8]},
    },
    "kalman": {
        "benchmark": "drift",
        "config": {"predictor": "rfr", "observer": "kalman", "observer_param": 1.0},
        "sweep": {"field": "observer_param", "values": [0.1, 1.0, 10.0]},
    },
    "models": {
        "benchmark": "drift",
        "config": {"predictor": "rfr"},
        "sweep": {"field": "n_models", "values": [2, 3, 5, 7]},
    },
    "noise": {
        "benchmark": "drift",
        "config": {"predictor": "mlp"},
        "sweep": {"field": "noise_sigma", "values": [0.01, 0.03, 0.06]},
    },
    "femap": {
        "benchmark": "drift",
        "config": {"predictor": "mlp"},
        "sweep": {"field": "fe_map", "values": ["compressed", "identity"]},
    },
    "crosslaw": {
        "benchmark": "drift",
        "test_benchmark": "cosine",
        "config": {"predictor": "mlp"},
        "predictors": ["dtr", "rfr", "mlp"],
    },
    "switching": {
        "benchmark": "switching",
        "config": {"n_models": 4, "mode_set": [0.0, 0.5, 1.0, 1.5]},
        "predictors": ["rfr", "rfc"],
    },
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("sweep", choices=sorted(SWEEPS))
    parser.add_argument("--runs", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="directory for the report JSON")
    args = parser.parse_args()

    spec = dict(SWEEPS[args.sweep])
    spec.update({"n_runs": args.runs, "base_seed": args.seed})
    result = run_experiment(spec, progress=print)
    print()
    print(format_report_table(result))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{args.sweep}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(result, fh, sort_keys=True, indent=1)
        print(f"report written to {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
