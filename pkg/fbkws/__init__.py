"""Learnable filterbank front-ends for keyword spotting."""

from .backend import ResNet, TrainedSystem, build_model, evaluate, train_stages
from .config import FbkwsConfig
from .data import LabelMap, SubsetSpec, load_dataset, split_by_speaker
from .experiments import (
    ExperimentReport,
    ExperimentSpec,
    parse_experiment_name,
    run_experiment,
    run_filter_removal,
    run_fusion,
)
from .frontends import FilterbankMatrixFrontend, FusedFrontend, GammachirpFrontend
from .plots import emit_plots

__version__ = "0.1.0"
__all__ = [
    "ResNet",
    "TrainedSystem",
    "build_model",
    "evaluate",
    "train_stages",
    "FbkwsConfig",
    "LabelMap",
    "SubsetSpec",
    "load_dataset",
    "split_by_speaker",
    "ExperimentReport",
    "ExperimentSpec",
    "parse_experiment_name",
    "run_experiment",
    "run_filter_removal",
    "run_fusion",
    "FilterbankMatrixFrontend",
    "FusedFrontend",
    "GammachirpFrontend",
    "emit_plots",
]
