"""Evolutionary feature construction with semantic sharpness regularization."""

from .config import ExperimentConfig, GenerationRecord, RunReport
from .data import Dataset, SplitSpec, StandardizationStats
from .evolution import Archive, ObjectiveVector, run
from .inference import ModelBundle, PredictionBounds, r2
from .ridge import FittedRidgeModel
from .sharpness import PerturbationConfig, SemanticsCache, SharpnessReport
from .trees import FeatureTree, Individual

__version__ = "0.1.0"

__all__ = [
    "Archive",
    "Dataset",
    "ExperimentConfig",
    "FeatureTree",
    "FittedRidgeModel",
    "GenerationRecord",
    "Individual",
    "ModelBundle",
    "ObjectiveVector",
    "PerturbationConfig",
    "PredictionBounds",
    "RunReport",
    "SemanticsCache",
    "SharpnessReport",
    "SplitSpec",
    "StandardizationStats",
    "r2",
    "run",
    "__version__",
]
