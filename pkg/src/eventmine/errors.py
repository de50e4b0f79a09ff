"""Exception taxonomy shared by all eventmine modules.

The CLI maps these onto exit codes: config/data problems exit 2,
numerical failures exit 3.
"""


class EventmineError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(EventmineError):
    """A file does not conform to its declared on-disk format."""


class DataError(EventmineError):
    """Well-formed input whose content violates a data invariant."""


class ConfigError(EventmineError):
    """Invalid or inconsistent run configuration."""


class ContractError(EventmineError):
    """A caller violated an operation precondition (e.g. shape mismatch)."""


class NumericsError(EventmineError):
    """A numerical computation produced non-finite or degenerate values."""


class DegenerateBatchError(EventmineError):
    """Every pair in a batch is masked; the training step must be skipped."""
