"""Semi-supervised event-type induction over embedded mentions."""

from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateBatchError,
    EventmineError,
    FormatError,
    NumericsError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "DegenerateBatchError",
    "EventmineError",
    "FormatError",
    "NumericsError",
    "__version__",
]
