"""End-to-end sensor synthesis, evaluation, bundles, and experiments.

Synthesis runs the three-step recipe: fit local models and pick the
representative bank, design one observer per model, then train a predictor
on windowed residual features.  The result is a sealed
:class:`VirtualSensor` that can be serialized to JSON, reloaded, and run
causally over fresh records.

The experiment driver repeats generate -> synthesize -> evaluate cycles
with derived seeds, optionally sweeping one configuration field, and
aggregates scores across runs.  Noise is added to signals *after*
normalization, so noise levels are relative to unit-variance data.
"""

from __future__ import annotations

import json
import time
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np

from . import benchmarks
from .arx import (
    SegmentationTree,
    arx_to_statespace,
    extract_local_models,
    grow_segmentation_tree,
)
from .dataset import (
    NormStats,
    TimeSeriesDataset,
    add_measurement_noise,
    fit_normalizer,
    normalize,
)
from .errors import ConfigError, DataError, VirtualSensorError
from .features import COMPRESSED, IDENTITY, FeatureConfig, build_feature_matrix
from .metrics import RunReport, aggregate_runs, f1_per_mode, fit_score, nrmse_score
from .observers import ObserverBank, ObserverSpec, place_poles, run_bank, stationary_kalman_gain
from .predictors import (
    ForestPredictor,
    MlpHyper,
    MlpPredictor,
    TreePredictor,
    min_distance_labels,
    predictor_from_dict,
    train_dtr,
    train_mlp,
    train_rfc,
    train_rfr,
)

__all__ = [
    "SensorConfig",
    "VirtualSensor",
    "synthesize_sensor",
    "evaluate_sensor",
    "run_experiment",
    "save_bundle",
    "load_bundle",
    "derive_seed",
    "generate_benchmark",
]

BUNDLE_SCHEMA_VERSION = 1

OBSERVER_KINDS = ("deadbeat", "pole", "kalman")
PREDICTOR_KINDS = ("mlp", "dtr", "rfr", "rfc")
FE_ALIASES = {"compressed": COMPRESSED, "identity": IDENTITY, COMPRESSED: COMPRESSED, IDENTITY: IDENTITY}


@dataclass(frozen=True)
class SensorConfig:
    """Hyper-parameters of one sensor; defaults are the reference setup."""

    arx_order: int = 5
    n_models: int = 5
    window: int = 7
    observer: str = "deadbeat"
    observer_param: float | None = None
    fe_map: str = COMPRESSED
    predictor: str = "rfr"
    seed: int = 0
    mlp: MlpHyper = field(default_factory=MlpHyper)
    mlp_restarts: int = 3
    n_trees: int = 10
    tree_max_depth: int = 15
    tree_min_leaf: int = 5
    mode_set: tuple[float, ...] | None = None
    feature_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.observer not in OBSERVER_KINDS:
            raise ConfigError(f"observer must be one of {OBSERVER_KINDS}, got {self.observer!r}")
        if self.predictor not in PREDICTOR_KINDS:
            raise ConfigError(f"predictor must be one of {PREDICTOR_KINDS}, got {self.predictor!r}")
        if self.fe_map not in FE_ALIASES:
            raise ConfigError(f"unknown feature map {self.fe_map!r}")
        object.__setattr__(self, "fe_map", FE_ALIASES[self.fe_map])
        if self.observer == "pole":
            if self.observer_param is None or not abs(self.observer_param) < 1:
                raise ConfigError("pole observer needs a location strictly inside the unit circle")
        if self.observer == "kalman":
            if self.observer_param is None or self.observer_param <= 0:
                raise ConfigError("kalman observer needs a positive noise weight")
        if self.predictor == "rfc" and self.mode_set is None:
            raise ConfigError("the rfc predictor needs a mode_set to classify into")
        if self.mlp_restarts < 1:
            raise ConfigError("mlp_restarts must be >= 1")
        if self.mode_set is not None:
            object.__setattr__(self, "mode_set", tuple(float(m) for m in self.mode_set))
        if self.arx_order < 1 or self.n_models < 1 or self.window < 0:
            raise ConfigError("arx_order, n_models must be >= 1 and window >= 0")

    def feature_config(self) -> FeatureConfig:
        w = None if self.feature_weights is None else np.asarray(self.feature_weights)
        return FeatureConfig(map_kind=self.fe_map, window=self.window, weights=w)

    def to_dict(self) -> dict:
        doc = {
            "arx_order": self.arx_order,
            "n_models": self.n_models,
            "window": self.window,
            "observer": self.observer,
            "observer_param": self.observer_param,
            "fe_map": self.fe_map,
            "predictor": self.predictor,
            "seed": self.seed,
            "mlp": {
                "hidden": self.mlp.hidden,
                "lr": self.mlp.lr,
                "batch": self.mlp.batch,
                "max_epochs": self.mlp.max_epochs,
                "patience": self.mlp.patience,
                "beta1": self.mlp.beta1,
                "beta2": self.mlp.beta2,
                "eps": self.mlp.eps,
                "val_fraction": self.mlp.val_fraction,
            },
            "mlp_restarts": self.mlp_restarts,
            "n_trees": self.n_trees,
            "tree_max_depth": self.tree_max_depth,
            "tree_min_leaf": self.tree_min_leaf,
            "mode_set": list(self.mode_set) if self.mode_set is not None else None,
            "feature_weights": list(self.feature_weights)
            if self.feature_weights is not None
            else None,
        }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SensorConfig":
        doc = dict(doc)
        mlp_doc = doc.pop("mlp", None)
        mlp = MlpHyper(**mlp_doc) if mlp_doc else MlpHyper()
        mode_set = doc.pop("mode_set", None)
        weights = doc.pop("feature_weights", None)
        known = {
            k: doc[k]
            for k in (
                "arx_order",
                "n_models",
                "window",
                "observer",
                "observer_param",
                "fe_map",
                "predictor",
                "seed",
                "mlp_restarts",
                "n_trees",
                "tree_max_depth",
                "tree_min_leaf",
            )
            if k in doc
        }
        unknown = set(doc) - set(known)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(
            mlp=mlp,
            mode_set=tuple(mode_set) if mode_set is not None else None,
            feature_weights=tuple(weights) if weights is not None else None,
            **known,
        )


@dataclass(frozen=True)
class VirtualSensor:
    """Deployable bundle: normalization, model bank, observers, predictor."""

    stats: NormStats
    tree: SegmentationTree
    bank: ObserverBank
    feature_config: FeatureConfig
    predictor: MlpPredictor | TreePredictor | ForestPredictor
    config: SensorConfig

    def __post_init__(self):
        width = self._expected_width()
        if isinstance(self.predictor, MlpPredictor):
            if self.predictor.input_width != width:
                raise ConfigError(
                    f"predictor expects {self.predictor.input_width} features, "
                    f"bank/feature config produce {width}"
                )
        else:
            # trees pin only the largest feature index they route on
            trees = (
                self.predictor.trees
                if isinstance(self.predictor, ForestPredictor)
                else (self.predictor,)
            )
            highest = max(int(t.feature.max()) for t in trees)
            if highest >= width:
                raise ConfigError(
                    f"predictor routes on feature {highest}, only {width} available"
                )

    def _expected_width(self) -> int:
        n_u = self.bank.n_u
        if self.feature_config.map_kind == IDENTITY:
            return self.bank.size * (self.feature_config.window + 1) + n_u + 1
        return self.bank.size + n_u + 1

    @property
    def mode_set(self) -> tuple[float, ...] | None:
        return self.config.mode_set

    @property
    def warmup(self) -> int:
        """Samples at the start of a record with no estimate at all."""
        return self.feature_config.window

    @property
    def scoring_warmup(self) -> int:
        """Initial samples excluded from scoring (window + observer settling)."""
        return self.feature_config.window + self.config.arx_order

    def estimate(self, ds: TimeSeriesDataset) -> np.ndarray:
        """Causal estimates for times ``warmup .. T-1`` (one row per time)."""
        if ds.n_u != self.bank.n_u:
            raise DataError(
                f"dataset has n_u={ds.n_u}, sensor was built for n_u={self.bank.n_u}"
            )
        ds_n = normalize(ds, self.stats)
        out = run_bank(self.bank, ds_n)
        X, _ = build_feature_matrix(out, ds_n, self.feature_config)
        raw = self.predictor.predict(X)
        if self.config.predictor == "rfc":
            modes = np.asarray(self.mode_set)
            return modes[raw][:, None]
        if raw.ndim == 1:
            raw = raw[:, None]
        return raw


@contextmanager
def _stage(name: str):
    try:
        yield
    except VirtualSensorError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc


def derive_seed(base_seed: int, *parts) -> np.random.SeedSequence:
    """Collision-resistant seed derivation from a base seed and stage labels."""
    key = tuple(zlib.crc32(str(p).encode()) for p in parts)
    return np.random.SeedSequence(entropy=int(base_seed), spawn_key=key)


def derive_int_seed(base_seed: int, *parts) -> int:
    return int(derive_seed(base_seed, *parts).generate_state(1)[0])


def synthesize_sensor(
    train_ds: TimeSeriesDataset,
    cfg: SensorConfig,
    tree: SegmentationTree | None = None,
) -> VirtualSensor:
    """Build a sensor from a training record that includes the target.

    ``tree`` may carry a segmentation tree previously grown on exactly the
    same (normalized) record and configuration, to avoid regrowing it when
    only observer or predictor settings change.
    """
    with _stage("normalize"):
        stats = fit_normalizer(train_ds)
        ds_n = normalize(train_ds, stats)
    with _stage("segmentation"):
        if tree is None:
            tree = grow_segmentation_tree(ds_n, cfg.arx_order, cfg.n_models)
        local_models = extract_local_models(tree)
    with _stage("observer-design"):
        models = tuple(arx_to_statespace(gamma) for _, gamma in local_models)
        specs = []
        for model in models:
            if cfg.observer == "deadbeat":
                specs.append(place_poles(model, 0.0))
            elif cfg.observer == "pole":
                specs.append(place_poles(model, cfg.observer_param))
            else:
                specs.append(stationary_kalman_gain(model, cfg.observer_param))
        bank = ObserverBank(models=models, specs=tuple(specs))
    with _stage("bank-run"):
        bank_out = run_bank(bank, ds_n)
    with _stage("features"):
        fe_cfg = cfg.feature_config()
        X, targets = build_feature_matrix(bank_out, ds_n, fe_cfg)
    with _stage("predictor-training"):
        if cfg.predictor == "mlp":
            # a few restarts guard against bad initializations; the one with
            # the best validation loss wins, so the result stays a pure
            # function of (data, config, seed)
            best_val, predictor = np.inf, None
            for i in range(cfg.mlp_restarts):
                candidate, rep = train_mlp(X, targets, seed=cfg.seed + i, hyper=cfg.mlp)
                if min(rep.val_losses) < best_val:
                    best_val, predictor = min(rep.val_losses), candidate
        elif cfg.predictor == "dtr":
            predictor = train_dtr(
                X, targets, max_depth=cfg.tree_max_depth, min_leaf=cfg.tree_min_leaf
            )
        elif cfg.predictor == "rfr":
            predictor = train_rfr(
                X,
                targets,
                n_trees=cfg.n_trees,
                max_depth=cfg.tree_max_depth,
                min_leaf=cfg.tree_min_leaf,
                seed=cfg.seed,
            )
        else:  # rfc
            labels = min_distance_labels(targets, np.asarray(cfg.mode_set))
            predictor = train_rfc(
                X,
                labels,
                n_trees=cfg.n_trees,
                max_depth=cfg.tree_max_depth,
                min_leaf=cfg.tree_min_leaf,
                seed=cfg.seed,
            )
    return VirtualSensor(
        stats=stats,
        tree=tree,
        bank=bank,
        feature_config=fe_cfg,
        predictor=predictor,
        config=cfg,
    )


def evaluate_sensor(
    sensor: VirtualSensor, test_ds: TimeSeriesDataset
) -> tuple[RunReport, np.ndarray]:
    """Causal evaluation; returns the report and the full estimate series.

    Estimates cover times ``warmup .. T-1``; scores additionally skip the
    observer settling period at the start of the record.
    """
    started = time.perf_counter()
    estimates = sensor.estimate(test_ds)
    skip = sensor.scoring_warmup - sensor.warmup
    truth = test_ds.rho[sensor.warmup :]
    if len(truth) <= skip + 1:
        raise DataError("record too short to score after warm-up")
    fit = fit_score(truth[skip:], estimates[skip:])
    nrmse = nrmse_score(truth[skip:], estimates[skip:])
    f1 = None
    if sensor.mode_set is not None:
        modes = np.asarray(sensor.mode_set)
        true_labels = min_distance_labels(truth[skip:], modes)
        pred_labels = min_distance_labels(estimates[skip:], modes)
        f1 = f1_per_mode(true_labels, pred_labels, len(modes))
    report = RunReport(
        fit=fit,
        nrmse=nrmse,
        seed=sensor.config.seed,
        per_mode_f1=f1,
        eval_seconds=time.perf_counter() - started,
    )
    return report, estimates


# ---------------------------------------------------------------------------
# Bundle serialization
# ---------------------------------------------------------------------------


def _sensor_to_dict(sensor: VirtualSensor) -> dict:
    return {
        "schema_version": BUNDLE_SCHEMA_VERSION,
        "norm": {
            "u_mean": sensor.stats.u_mean.tolist(),
            "u_std": sensor.stats.u_std.tolist(),
            "y_mean": sensor.stats.y_mean.tolist(),
            "y_std": sensor.stats.y_std.tolist(),
        },
        "tree": sensor.tree.to_dict(),
        "observers": {
            "kinds": [s.kind for s in sensor.bank.specs],
            "params": [s.param for s in sensor.bank.specs],
            "gains": [s.gain.tolist() for s in sensor.bank.specs],
        },
        "features": {
            "map_kind": sensor.feature_config.map_kind,
            "window": sensor.feature_config.window,
            "weights": sensor.feature_config.weights.tolist(),
        },
        "predictor": sensor.predictor.to_dict(),
        "config": sensor.config.to_dict(),
    }


def _sensor_from_dict(doc: dict) -> VirtualSensor:
    version = doc.get("schema_version")
    if version != BUNDLE_SCHEMA_VERSION:
        raise DataError(
            f"bundle schema version {version!r} not supported "
            f"(expected {BUNDLE_SCHEMA_VERSION})"
        )
    stats = NormStats(
        u_mean=np.asarray(doc["norm"]["u_mean"]),
        u_std=np.asarray(doc["norm"]["u_std"]),
        y_mean=np.asarray(doc["norm"]["y_mean"]),
        y_std=np.asarray(doc["norm"]["y_std"]),
    )
    tree = SegmentationTree.from_dict(doc["tree"])
    local_models = extract_local_models(tree)
    models = tuple(arx_to_statespace(gamma) for _, gamma in local_models)
    obs = doc["observers"]
    specs = tuple(
        ObserverSpec(kind=k, param=p, gain=np.asarray(g))
        for k, p, g in zip(obs["kinds"], obs["params"], obs["gains"])
    )
    bank = ObserverBank(models=models, specs=specs)
    fe = doc["features"]
    fe_cfg = FeatureConfig(
        map_kind=fe["map_kind"], window=int(fe["window"]), weights=np.asarray(fe["weights"])
    )
    predictor = predictor_from_dict(doc["predictor"])
    cfg = SensorConfig.from_dict(doc["config"])
    return VirtualSensor(
        stats=stats,
        tree=tree,
        bank=bank,
        feature_config=fe_cfg,
        predictor=predictor,
        config=cfg,
    )


def save_bundle(sensor: VirtualSensor, path) -> None:
    """Serialize to JSON; identical sensors produce byte-identical files."""
    doc = _sensor_to_dict(sensor)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_bundle(path) -> VirtualSensor:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a valid sensor bundle: {exc}") from None
    if not isinstance(doc, dict):
        raise DataError(f"{path}: not a valid sensor bundle")
    return _sensor_from_dict(doc)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def generate_benchmark(
    name: str,
    samples: int,
    seed,
    battery_coeffs: benchmarks.BatteryCoefficients | None = None,
    cosine_beta: float = 200.0,
) -> TimeSeriesDataset:
    """Produce one raw (noise-free, unnormalized) benchmark record."""
    if name == "drift":
        return benchmarks.simulate_synthetic(
            benchmarks.SyntheticConfig(T=samples, seed=seed, alpha=1.0)
        )
    if name == "cosine":
        return benchmarks.simulate_synthetic(
            benchmarks.SyntheticConfig(
                T=samples, seed=seed, alpha=1.0, rho_law=benchmarks.CosineLaw(beta=cosine_beta)
            )
        )
    if name == "switching":
        return benchmarks.simulate_switching(
            benchmarks.SyntheticConfig(
                T=samples, seed=seed, alpha=0.0, rho_law=benchmarks.SwitchingLaw()
            )
        )
    if name == "battery":
        coeffs = battery_coeffs or benchmarks.DEFAULT_BATTERY_COEFFS
        return benchmarks.simulate_battery(coeffs, samples, seed)
    raise ConfigError(f"unknown benchmark {name!r}")


_SWEEPABLE = {
    "observer_param",
    "n_models",
    "window",
    "arx_order",
    "observer",
    "predictor",
    "noise_sigma",
    "fe_map",
}


def run_experiment(spec: dict, progress=None) -> dict:
    """Run ``n_runs`` generate/train/test cycles, optionally sweeping a field.

    The spec is a plain dict (usually parsed from JSON) with keys:
    ``benchmark``, optional ``test_benchmark``, ``train_samples``,
    ``test_samples``, ``noise_sigma``, ``n_runs``, ``base_seed``,
    ``config`` (sensor configuration), optional ``predictors`` (list, to
    train several predictor kinds on shared data), and optional ``sweep``
    = ``{"field": name, "values": [...]}``.

    Within one run all sweep settings and predictors share the same
    generated data (and, where the configuration allows, the same
    segmentation tree), so comparisons across settings are paired.
    """
    benchmark = spec.get("benchmark", "drift")
    test_benchmark = spec.get("test_benchmark", benchmark)
    train_samples = int(spec.get("train_samples", 25_000))
    test_samples = int(spec.get("test_samples", 5_000))
    noise_sigma = float(spec.get("noise_sigma", 0.03))
    n_runs = int(spec.get("n_runs", 10))
    base_seed = int(spec.get("base_seed", 0))
    base_cfg = SensorConfig.from_dict(spec.get("config", {}))
    predictors = spec.get("predictors", [base_cfg.predictor])
    sweep = spec.get("sweep")
    if sweep is not None:
        if sweep.get("field") not in _SWEEPABLE:
            raise ConfigError(f"cannot sweep {sweep.get('field')!r}")
        sweep_field = sweep["field"]
        sweep_values = list(sweep["values"])
    else:
        sweep_field, sweep_values = None, [None]
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")

    results: dict[tuple, list[RunReport]] = {
        (v if not isinstance(v, list) else tuple(v), p): []
        for v in sweep_values
        for p in predictors
    }
    for r in range(n_runs):
        raw_train = generate_benchmark(
            benchmark, train_samples, derive_seed(base_seed, "train-gen", r)
        )
        raw_test = generate_benchmark(
            test_benchmark, test_samples, derive_seed(base_seed, "test-gen", r)
        )
        stats = fit_normalizer(raw_train)
        train_n = normalize(raw_train, stats)
        test_n = normalize(raw_test, stats)
        noisy_cache: dict[float, tuple] = {}
        tree_cache: dict[tuple, SegmentationTree] = {}
        for value in sweep_values:
            sigma = noise_sigma
            cfg = base_cfg
            if sweep_field == "noise_sigma":
                sigma = float(value)
            elif sweep_field is not None:
                cfg = replace(cfg, **{sweep_field: value})
            if sigma not in noisy_cache:
                noisy_cache[sigma] = (
                    add_measurement_noise(
                        train_n, sigma, derive_seed(base_seed, "train-noise", r)
                    ),
                    add_measurement_noise(
                        test_n, sigma, derive_seed(base_seed, "test-noise", r)
                    ),
                )
            train_ds, test_ds = noisy_cache[sigma]
            for pred in predictors:
                run_cfg = replace(
                    cfg, predictor=pred, seed=derive_int_seed(base_seed, "model", r)
                )
                tree_key = (sigma, run_cfg.arx_order, run_cfg.n_models)
                started = time.perf_counter()
                sensor = synthesize_sensor(
                    train_ds, run_cfg, tree=tree_cache.get(tree_key)
                )
                tree_cache[tree_key] = sensor.tree
                train_seconds = time.perf_counter() - started
                report, _ = evaluate_sensor(sensor, test_ds)
                report = replace(report, train_seconds=train_seconds)
                key = (value if not isinstance(value, list) else tuple(value), pred)
                results[key].append(report)
                if progress is not None:
                    progress(
                        f"run {r + 1}/{n_runs} "
                        f"{sweep_field or 'setting'}={value} predictor={pred}: "
                        f"FIT={report.fit:.3f} NRMSE={report.nrmse:.3f}"
                    )

    settings = []
    for (value, pred), reports in results.items():
        settings.append(
            {
                "sweep_field": sweep_field,
                "sweep_value": value,
                "predictor": pred,
                "aggregate": aggregate_runs(reports),
                "runs": [rep.to_dict() for rep in reports],
            }
        )
    return {"spec": spec, "settings": settings}
