"""Confidence sets for subgroups defined by a regression threshold."""

from .data import ColumnSpec, Dataset, load_csv, read_schema
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    NumericError,
    SeparationError,
    SubselError,
)
from .glm import BandRegion, fit_glm
from .hte import crossfit, pseudo_outcomes
from .iss import UpperSetRegion, pvalue_binary, pvalue_quantile, select_lower, select_two_sided, select_upper

__version__ = "0.1.0"

__all__ = [
    "BandRegion",
    "ColumnSpec",
    "ConfigError",
    "DataError",
    "Dataset",
    "DomainError",
    "NumericError",
    "SeparationError",
    "SubselError",
    "UpperSetRegion",
    "crossfit",
    "fit_glm",
    "load_csv",
    "pseudo_outcomes",
    "pvalue_binary",
    "pvalue_quantile",
    "read_schema",
    "select_lower",
    "select_two_sided",
    "select_upper",
]
