"""Neural-network emulation of a mass-conserving aerosol microphysics step."""

from .schema import SCHEMA, Species, SchemaError, paired_input, species_output_indices
from .data import Dataset
from .refmodel import GeneratorParams, generate_dataset, sample_state, step
from .transforms import NormStats, fit_stats, log_transform, inverse_log
from .model import Checkpoint, ConstraintConfig, MlpParams, init, forward, backward
from .training import TrainConfig, train, fit_linear_baseline
from .evaluation import MetricsReport, evaluate
from .classifier import LogPipelineBundle, predict_tendencies, train_classifier, train_log_pipeline

__version__ = "0.1.0"

__all__ = [
    "SCHEMA", "Species", "SchemaError", "paired_input", "species_output_indices", "Dataset",
    "GeneratorParams", "generate_dataset", "sample_state", "step", "NormStats", "fit_stats",
    "log_transform", "inverse_log", "Checkpoint", "ConstraintConfig", "MlpParams", "init",
    "forward", "backward", "TrainConfig", "train", "fit_linear_baseline", "MetricsReport",
    "evaluate", "LogPipelineBundle", "predict_tendencies", "train_classifier",
    "train_log_pipeline",
]
