"""Fairness-aware training with classwise chi-square Group DRO."""
from .dataset import (
    CellPartition,
    LabeledDataset,
    SyntheticSpec,
    balanced_batch,
    generate_synthetic,
    load_csv,
    partition_cells,
    split,
)
from .dro import (
    GroupWeights,
    UncertaintySpec,
    best_response,
    best_response_nonneg,
    chi2_divergence,
    oracle_max,
    simplex_best_response,
    smoothed_ibr_update,
    worst_case_objective,
)
from .harness import DEFAULT_RHO_GRID, DataSource, pareto_envelope, run_experiment, select_model, sweep
from .metrics import MetricsReport, balanced_accuracy, cell_accuracies, dca, deo, evaluate
from .model import LinearModel, load_model, save_model
from .trainer import TrainConfig, TrainHistory, train

__version__ = "0.1.0"
