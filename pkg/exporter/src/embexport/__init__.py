"""embexport: encode raw text into the embedding-pipeline input formats."""

from .encoders import Encoder, HashedEncoder, get_encoder, register_encoder
from .errors import ConfigError, DataError, ExportError, FormatError
from .export import ExportManifest, export_corpus, export_mentions
from .formats import write_corpus_labels, write_matrix, write_mention_labels

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "Encoder",
    "ExportError",
    "ExportManifest",
    "FormatError",
    "HashedEncoder",
    "export_corpus",
    "export_mentions",
    "get_encoder",
    "register_encoder",
    "write_corpus_labels",
    "write_matrix",
    "write_mention_labels",
    "__version__",
]
