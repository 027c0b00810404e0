"""Spatially regularized multi-task neural regression for within-field,
grid-scale crop yield prediction."""

from .baselines import LinearModel, RegressionTree, fit_linear, fit_tree, predict_linear, predict_tree
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    SOURCE_ORDER,
    FieldDataset,
    NormParams,
    Season,
    TaskTable,
    biweekly_aggregate,
    denormalize,
    ndvi,
    normalize_dataset,
    train_test_split,
    truncate_to_month,
)
from .dataio import RunConfig, load_field_csv, load_run_config, write_field_csv
from .errors import DataValidationError, FieldYieldError, NumericalError
from .experiments import (
    ExperimentSpec,
    run_experiment,
    run_lambda_sweep,
    run_monthly_online,
    run_neighborhood_sweep,
    run_source_ablations,
    run_yearly_comparison,
    score_external_predictions,
)
from .grid import (
    FieldGrid,
    SpatialWeights,
    build_grid,
    build_spatial_weights,
    euclidean_distance,
    idw_weight,
)
from .heatmap import export_heatmap, read_heatmap_csv
from .metrics import MetricsReport, compute_metrics
from .network import MtlArch, MtlModel, backward, concat_features, dense_forward, forward, init_model, sigmoid
from .synth import SynthTruth, default_benchmark, synth_field
from .training import (
    LossConfig,
    TrainConfig,
    TrainHistory,
    mse_data_loss,
    optimizer_step,
    spatial_regularizer,
    total_loss,
    train,
)

__version__ = "0.1.0"
