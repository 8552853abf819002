"""Desk-scale GAN lab for studying how Lipschitz regularization restricts
the domain and attained gradients of discriminator losses."""

from .config import DataConfig, ExperimentConfig, OptimConfig, RegularizerSpec
from .losses import LossSpec
from .nn import MlpConfig, ParamStore

__version__ = "0.1.0"

__all__ = [
    "DataConfig",
    "ExperimentConfig",
    "LossSpec",
    "MlpConfig",
    "OptimConfig",
    "ParamStore",
    "RegularizerSpec",
]
