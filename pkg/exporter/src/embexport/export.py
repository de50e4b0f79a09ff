"""Turn raw text files into the embedding-pipeline input formats.

Mentions come in as JSONL records {"text", "role", "type"?, "gold_type"?};
the exporter encodes each text, writes the EMB1 matrix plus the matching
label JSONL, and optionally a row-aligned augmented matrix built from a
paraphrase file. Name/frame corpora come in as TSV "label<TAB>text" and
go out as EMB1 plus a one-label-per-line text file. Everything is
deterministic for a deterministic encoder, so re-exporting the same
inputs yields byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import Encoder, get_encoder
from .errors import ConfigError, DataError, FormatError
from .formats import write_corpus_labels, write_matrix, write_mention_labels

ROLE_SEEN = "seen"
ROLE_UNSEEN = "unseen"


@dataclass
class ExportManifest:
    """What to export: input text file, encoder identifier, output paths.

    ``paraphrases_path`` and ``output_augmented`` must be given together;
    the paraphrase file must supply exactly one rewrite per mention row.
    """

    texts_path: str | Path
    encoder: str
    output_embeddings: str | Path
    output_labels: str | Path
    pooling: str = "mean"
    paraphrases_path: str | Path | None = None
    output_augmented: str | Path | None = None

    def __post_init__(self):
        if self.pooling != "mean":
            raise ConfigError(f"unsupported pooling {self.pooling!r}, only 'mean'")
        if (self.paraphrases_path is None) != (self.output_augmented is None):
            raise ConfigError(
                "paraphrases_path and output_augmented must be given together"
            )


def _read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise FormatError(f"{path}:{lineno}: expected a JSON object")
            rows.append(rec)
    return rows


def _mention_label(row: int, rec: dict, source: str | Path) -> dict:
    text = rec.get("text")
    if not isinstance(text, str):
        raise FormatError(f"{source}: row {row} has no text field")
    role = rec.get("role")
    if role not in (ROLE_SEEN, ROLE_UNSEEN):
        raise DataError(f"{source}: row {row} has unknown role {role!r}")
    label: dict = {"idx": row, "role": role}
    if role == ROLE_SEEN:
        type_name = rec.get("type")
        if not type_name:
            raise DataError(f"{source}: seen row {row} has no type label")
        label["type"] = type_name
    else:
        if rec.get("type"):
            raise DataError(f"{source}: unseen row {row} carries a training type label")
        gold = rec.get("gold_type")
        if gold:
            label["gold_type"] = gold
    return label


def _read_paraphrases(path: str | Path, n: int) -> list[str]:
    texts: dict[int, str] = {}
    for rec in _read_jsonl(path):
        idx = rec.get("idx")
        if not isinstance(idx, int) or idx in texts:
            raise FormatError(f"{path}: bad or duplicate paraphrase idx {idx!r}")
        text = rec.get("text")
        if not isinstance(text, str):
            raise FormatError(f"{path}: paraphrase {idx} has no text field")
        texts[idx] = text
    if sorted(texts) != list(range(n)):
        raise FormatError(
            f"{path}: {len(texts)} paraphrases for {n} mention rows, need one each"
        )
    return [texts[i] for i in range(n)]


def export_mentions(manifest: ExportManifest) -> tuple[int, int]:
    """Encode a mention JSONL file; returns (rows, dimension)."""
    encoder: Encoder = get_encoder(manifest.encoder)
    records = _read_jsonl(manifest.texts_path)
    labels = [_mention_label(i, rec, manifest.texts_path) for i, rec in enumerate(records)]
    texts = [rec["text"] for rec in records]

    embeddings = np.asarray(encoder.encode(texts))
    if embeddings.shape != (len(texts), encoder.dim):
        raise DataError(
            f"encoder returned shape {embeddings.shape}, "
            f"expected {(len(texts), encoder.dim)}"
        )

    augmented = None
    if manifest.paraphrases_path is not None:
        rewrites = _read_paraphrases(manifest.paraphrases_path, len(texts))
        augmented = np.asarray(encoder.encode(rewrites))
        if augmented.shape[1] != embeddings.shape[1]:
            raise DataError(
                f"dimension drift: augmented rows have dimension "
                f"{augmented.shape[1]}, mentions have {embeddings.shape[1]}"
            )

    write_matrix(manifest.output_embeddings, embeddings)
    write_mention_labels(manifest.output_labels, labels)
    if augmented is not None:
        write_matrix(manifest.output_augmented, augmented)
    return embeddings.shape


def export_corpus(manifest: ExportManifest) -> tuple[int, int]:
    """Encode a TSV "label<TAB>text" corpus; returns (rows, dimension)."""
    if manifest.paraphrases_path is not None:
        raise ConfigError("corpus exports do not take paraphrases")
    encoder: Encoder = get_encoder(manifest.encoder)

    labels: list[str] = []
    texts: list[str] = []
    with open(manifest.texts_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise FormatError(
                    f"{manifest.texts_path}:{lineno}: expected label<TAB>text"
                )
            label, text = line.split("\t", 1)
            if not label:
                raise DataError(f"{manifest.texts_path}:{lineno}: blank label")
            if label in labels:
                raise DataError(
                    f"{manifest.texts_path}:{lineno}: duplicate label {label!r}"
                )
            labels.append(label)
            texts.append(text)

    embeddings = np.asarray(encoder.encode(texts))
    write_matrix(manifest.output_embeddings, embeddings)
    write_corpus_labels(manifest.output_labels, labels)
    return embeddings.shape
