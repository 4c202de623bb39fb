"""Low-rank plus column-sparse compression of linear layers with sensitivity-driven pruning."""

from .decomposition import (
    CompressionBudget,
    DenseLayer,
    FactorizedLayer,
    backward,
    forward,
    init_from_pretrained,
    rank_from_budget,
    reconstruct,
    remaining_ratio,
)
from .errors import (
    BudgetError,
    CheckpointFormatError,
    ConfigError,
    ConvergenceError,
    EmptyInputError,
    LosparseError,
    ShapeError,
    StorageError,
    TrainingError,
)
from .importance import ImportanceState, ema_update, export_histogram, instant_sensitivity, neuron_scores
from .linalg import SvdResult, frobenius_norm, matmul, svd
from .pruner import NeuronRef, apply_prune, itp_step, select_retained
from .schedule import PruneSchedule, remaining_fraction

__version__ = "0.1.0"
