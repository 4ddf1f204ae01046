"""Conditional beta-VAE with an auxiliary classifier for multi-channel
physiological time series: preprocessing, training, evaluation, and
condition-specific synthetic signal generation."""

from .benchgen import BenchmarkSpec
from .dataio import DatasetMeta, SplitPlan, Trial, load_dataset, make_split_plan, save_dataset
from .model import LatentPosterior, ModelConfig, reference_config
from .nn import AdamState, ParamStore, load_checkpoint, save_checkpoint
from .synth import GenerationRequest
from .train import RunHistory, TrainConfig, run_cross_validation, train_fold

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BenchmarkSpec",
    "DatasetMeta",
    "GenerationRequest",
    "LatentPosterior",
    "ModelConfig",
    "ParamStore",
    "RunHistory",
    "SplitPlan",
    "TrainConfig",
    "Trial",
    "load_checkpoint",
    "load_dataset",
    "make_split_plan",
    "reference_config",
    "run_cross_validation",
    "save_checkpoint",
    "save_dataset",
    "train_fold",
    "__version__",
]
