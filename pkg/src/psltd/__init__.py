"""Printer attribution from the local texture of printed letters."""

from .descriptor import PSLTD_DIM, DescriptorParams, Psltd, compute_psltd
from .errors import ConfigError, DataError, PsltdError, TrainingError
from .gabor import GaborConfig, build_bank

__version__ = "0.1.0"

__all__ = [
    "PSLTD_DIM", "ConfigError", "DataError", "DescriptorParams", "GaborConfig", "Psltd", "PsltdError",
    "TrainingError", "build_bank", "compute_psltd",
]
