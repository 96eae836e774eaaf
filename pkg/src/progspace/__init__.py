"""Progression-space subtyping of longitudinal clinical assessment data.

Visit tables are imputed and flattened into patient feature vectors,
reduced to a low-rank progression space, clustered into progression-rate
subtypes with a Gaussian mixture, and the subtypes are predicted from
early visits with a random forest.
"""

from .errors import (
    ConfigError,
    NumericError,
    ProgspaceError,
    SchemaError,
    StorageError,
    ValidationError,
)
from .seeding import derive_seed

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "NumericError",
    "ProgspaceError",
    "SchemaError",
    "StorageError",
    "ValidationError",
    "derive_seed",
]
