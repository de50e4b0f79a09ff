"""Writers for the embedding pipeline's on-disk formats.

EMB1 layout: 4-byte magic b"EMB1", then little-endian uint32 N and d,
then N*d float32 values row-major. Mention labels are JSONL records
{"idx", "role", "type"?, "gold_type"?}; corpus labels are one string per
line. These match the downstream loader's documented contract byte for
byte, so exports round-trip without that package installed here.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

EMB1_MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")


def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    arr = np.ascontiguousarray(matrix, dtype="<f4")
    if arr.ndim != 2:
        raise FormatError(f"EMB1 stores 2-D matrices, got shape {arr.shape}")
    n, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMB1_MAGIC, n, d))
        fh.write(arr.tobytes())


def write_mention_labels(path: str | Path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def write_corpus_labels(path: str | Path, labels: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label in labels:
            fh.write(label)
            fh.write("\n")
