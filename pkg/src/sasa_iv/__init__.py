"""Structure-aligned unsupervised domain adaptation for multivariate time series."""

from .estimator import SASAClassifier, SASARegressor, check_series
from .metrics import SDReport, evaluate, structural_distance, structure_score
from .model import VARIANTS, ModelConfig, SASANet, build_model, fit, load_checkpoint, save_checkpoint
from .numerics import NumericalError, grad_stop, mmd, sparsemax, st_indicator
from .synth import DomainSpec, generate, sample_pair

__version__ = "0.1.0"

__all__ = [
    "SASAClassifier", "SASARegressor", "check_series", "SDReport", "evaluate", "structural_distance",
    "structure_score", "VARIANTS", "ModelConfig", "SASANet", "build_model", "fit", "load_checkpoint",
    "save_checkpoint", "NumericalError", "grad_stop", "mmd", "sparsemax", "st_indicator", "DomainSpec",
    "generate", "sample_pair",
]
