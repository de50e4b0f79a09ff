"""Error taxonomy for the exporter."""


class ExportError(Exception):
    """Base class for everything embexport raises on purpose."""


class FormatError(ExportError):
    """Malformed input file (bad JSON, bad TSV, misaligned paraphrases)."""


class DataError(ExportError):
    """Well-formed input with invalid content (blank text, bad roles)."""


class ConfigError(ExportError):
    """Bad manifest or CLI configuration (unknown encoder, missing paths)."""
