"""Data-driven virtual sensors from observer-bank residual features.

The pipeline learns a bank of local affine ARX models from logged data,
designs one linear observer per model, turns windows of their output
residuals into compact features, and trains a lightweight predictor that
estimates an unmeasured parameter (drifting scheduling variables, switching
modes, hidden states) at runtime.
"""

from .arx import (
    ArxCoefficients,
    SegmentationTree,
    StateSpaceModel,
    arx_to_statespace,
    build_regressor,
    extract_local_models,
    fit_arx_ls,
    grow_segmentation_tree,
    simulate_arx,
)
from .dataset import (
    NormStats,
    TimeSeriesDataset,
    add_measurement_noise,
    fit_normalizer,
    load_csv,
    normalize,
    denormalize,
    save_csv,
    split_train_val,
)
from .errors import ConfigError, DataError, NumericalError, VirtualSensorError
from .features import FeatureConfig, build_feature_matrix, fe_compressed, fe_identity
from .metrics import RunReport, aggregate_runs, f1_per_mode, fit_score, nrmse_score
from .observers import (
    BankOutput,
    InfoVector,
    ObserverBank,
    ObserverSpec,
    deadbeat_gain,
    place_poles,
    run_bank,
    stationary_kalman_gain,
    step_observer,
)
from .pipeline import (
    SensorConfig,
    VirtualSensor,
    evaluate_sensor,
    load_bundle,
    run_experiment,
    save_bundle,
    synthesize_sensor,
)
from .predictors import (
    ForestPredictor,
    MlpHyper,
    MlpPredictor,
    TreePredictor,
    min_distance_classify,
    mlp_forward,
    train_dtr,
    train_mlp,
    train_rfc,
    train_rfr,
)

__version__ = "0.1.0"
