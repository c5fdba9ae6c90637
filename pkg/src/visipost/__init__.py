"""Calibrated visibility forecasts from ensemble predictions.

Categorical post-processing (proportional-odds logistic regression and
multilayer perceptrons) on the 84-category visibility scale, multivariate
reconstruction by ensemble copula coupling or the Schaake shuffle, and
univariate and multivariate verification tools.
"""
from .domain import N_CATEGORIES, Dataset, build_scale, discretize, ingest_csv
from .errors import ConfigError, DataError, InvalidInputError, NumericError, UnfitModelError, VisipostError

__version__ = "0.1.0"

__all__ = ["N_CATEGORIES", "Dataset", "build_scale", "discretize", "ingest_csv", "ConfigError",
           "DataError", "InvalidInputError", "NumericError", "UnfitModelError", "VisipostError"]
