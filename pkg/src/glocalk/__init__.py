"""Rating-matrix completion with a kernelized item autoencoder and a global convolution kernel."""

from .estimator import GLocalK, rmse
from .pipeline import ExperimentConfig, build_config, run_experiment

__all__ = ["GLocalK", "ExperimentConfig", "build_config", "run_experiment", "rmse"]
__version__ = "0.1.0"
