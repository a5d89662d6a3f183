"""Illuminant estimation with a convolutional autoencoder, plus statistical baselines."""
from .baselines import general_grey_world, grey_world, minkowski_estimate, shades_of_grey, white_patch
from .color import DomainError, apply_illuminant, correct_image, rae
from .metrics import ErrorStats, summarize
from .model import CAEConfig, CAEParams, ConfigurationError, build, load, save

__version__ = "0.1.0"

__all__ = [
    "CAEConfig",
    "CAEParams",
    "ConfigurationError",
    "DomainError",
    "ErrorStats",
    "apply_illuminant",
    "build",
    "correct_image",
    "general_grey_world",
    "grey_world",
    "load",
    "minkowski_estimate",
    "rae",
    "save",
    "shades_of_grey",
    "summarize",
    "white_patch",
]
