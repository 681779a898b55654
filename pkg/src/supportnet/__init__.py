"""Class-incremental learning with SVM-selected support data and
consolidation regularizers."""

__version__ = "0.1.0"

from .core_math import SeededRng, gaussian_draws, matmul, softmax
from .data import ClassBatchSchedule, Dataset, load_idx, save_idx, split_by_schedule, synthetic_blobs
from .engine import ExperimentLog, MethodConfig, run_experiment, table2_diagnostic
from .errors import SupportNetError

__all__ = [
    "ClassBatchSchedule",
    "Dataset",
    "ExperimentLog",
    "MethodConfig",
    "SeededRng",
    "SupportNetError",
    "gaussian_draws",
    "load_idx",
    "matmul",
    "run_experiment",
    "save_idx",
    "softmax",
    "split_by_schedule",
    "synthetic_blobs",
    "table2_diagnostic",
    "__version__",
]
