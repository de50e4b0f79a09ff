"""On-disk formats and dataset model: EMB1 binary matrices, JSONL labels,
frame-hierarchy TSVs, plus a seeded synthetic generator so the whole
pipeline runs without external corpora.

EMB1 layout (little-endian): magic ``EMB1``, u32 N, u32 d, then N*d
float32 values row-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DataError, FormatError

EMB1_MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")

ROLE_SEEN = "seen"
ROLE_UNSEEN = "unseen"


# ---------------------------------------------------------------------------
# EMB1 binary matrix format


def save_matrix(path: str | Path, matrix: np.ndarray) -> None:
    """Write a 2-D float array as an EMB1 file."""
    arr = np.ascontiguousarray(matrix, dtype="<f4")
    if arr.ndim != 2:
        raise ContractError(f"EMB1 stores 2-D matrices, got shape {arr.shape}")
    n, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMB1_MAGIC, n, d))
        fh.write(arr.tobytes())


def load_matrix(path: str | Path) -> np.ndarray:
    """Read an EMB1 file into an (N, d) float32 array."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated EMB1 header")
    magic, n, d = _HEADER.unpack_from(raw)
    if magic != EMB1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {EMB1_MAGIC!r}")
    expected = _HEADER.size + 4 * n * d
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload is {len(raw) - _HEADER.size} bytes, "
            f"header promises {4 * n * d}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return data.reshape(n, d).copy()


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class EmbeddingDataset:
    """Mention embeddings plus per-row type tags.

    ``type_ids`` holds the seen-type id per row (-1 for unseen rows) and is
    the only label information training may consume. ``gold_type_ids`` is
    quarantined for evaluation: -1 where no gold label exists.
    """

    embeddings: np.ndarray
    type_ids: np.ndarray
    gold_type_ids: np.ndarray
    seen_type_names: list[str]
    gold_type_names: list[str]
    augmented: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.embeddings = np.asarray(self.embeddings, dtype=np.float32)
        self.type_ids = np.asarray(self.type_ids, dtype=np.int64)
        self.gold_type_ids = np.asarray(self.gold_type_ids, dtype=np.int64)
        n, d = self.embeddings.shape
        if n < 1 or d < 1:
            raise DataError(f"dataset must be at least 1x1, got {n}x{d}")
        if not np.isfinite(self.embeddings).all():
            raise DataError("embeddings contain NaN or Inf")
        if self.type_ids.shape != (n,) or self.gold_type_ids.shape != (n,):
            raise FormatError("tag arrays must have one entry per row")
        if self.augmented is not None:
            self.augmented = np.asarray(self.augmented, dtype=np.float32)
            if self.augmented.shape != self.embeddings.shape:
                raise FormatError(
                    f"augmented shape {self.augmented.shape} != "
                    f"embeddings shape {self.embeddings.shape}"
                )
            if not np.isfinite(self.augmented).all():
                raise DataError("augmented embeddings contain NaN or Inf")

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    @property
    def n_seen_types(self) -> int:
        return len(self.seen_type_names)

    @property
    def seen_mask(self) -> np.ndarray:
        return self.type_ids >= 0

    @property
    def unseen_indices(self) -> np.ndarray:
        return np.flatnonzero(self.type_ids < 0)

    def unseen_gold(self) -> np.ndarray:
        """Gold type ids of the unseen rows (evaluation only)."""
        gold = self.gold_type_ids[self.unseen_indices]
        if (gold < 0).any():
            raise DataError("some unseen rows have no gold type label")
        return gold


def _intern(name: str, table: list[str], index: dict[str, int]) -> int:
    if name not in index:
        index[name] = len(table)
        table.append(name)
    return index[name]


def load_dataset(
    embeddings_path: str | Path,
    labels_path: str | Path,
    augmented_path: str | Path | None = None,
) -> EmbeddingDataset:
    """Load an EMB1 matrix and its JSONL label file into a validated dataset.

    Label records look like ``{"idx": 0, "role": "seen", "type": "Attack"}``;
    string labels are interned to dense ids in file order.
    """
    embeddings = load_matrix(embeddings_path)
    n = embeddings.shape[0]

    records: dict[int, dict] = {}
    with open(labels_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{labels_path}:{lineno}: invalid JSON: {exc}") from exc
            idx = rec.get("idx")
            if not isinstance(idx, int) or idx in records:
                raise FormatError(f"{labels_path}:{lineno}: bad or duplicate idx {idx!r}")
            records[idx] = rec
    if sorted(records) != list(range(n)):
        raise FormatError(
            f"{labels_path}: {len(records)} label records for {n} embedding rows"
        )

    type_ids = np.full(n, -1, dtype=np.int64)
    gold_ids = np.full(n, -1, dtype=np.int64)
    seen_names: list[str] = []
    seen_index: dict[str, int] = {}
    gold_names: list[str] = []
    gold_index: dict[str, int] = {}
    for idx in range(n):
        rec = records[idx]
        role = rec.get("role")
        if role == ROLE_SEEN:
            type_name = rec.get("type")
            if not type_name:
                raise DataError(f"{labels_path}: seen row {idx} has no type label")
            type_ids[idx] = _intern(type_name, seen_names, seen_index)
        elif role == ROLE_UNSEEN:
            if rec.get("type"):
                raise DataError(
                    f"{labels_path}: unseen row {idx} carries a training type label"
                )
            gold = rec.get("gold_type")
            if gold:
                gold_ids[idx] = _intern(gold, gold_names, gold_index)
        else:
            raise FormatError(f"{labels_path}: row {idx} has unknown role {role!r}")
        if not np.isfinite(embeddings[idx]).all():
            raise DataError(f"{embeddings_path}: row {idx} contains NaN or Inf")

    augmented = None
    if augmented_path is not None:
        augmented = load_matrix(augmented_path)
        if augmented.shape != embeddings.shape:
            raise FormatError(
                f"{augmented_path}: shape {augmented.shape} does not match "
                f"embeddings shape {embeddings.shape}"
            )
        if not np.isfinite(augmented).all():
            raise DataError(f"{augmented_path}: contains NaN or Inf")

    return EmbeddingDataset(
        embeddings=embeddings,
        type_ids=type_ids,
        gold_type_ids=gold_ids,
        seen_type_names=seen_names,
        gold_type_names=gold_names,
        augmented=augmented,
    )


def save_dataset(
    dataset: EmbeddingDataset,
    embeddings_path: str | Path,
    labels_path: str | Path,
    augmented_path: str | Path | None = None,
) -> None:
    """Write a dataset back out in the EMB1 + JSONL formats."""
    save_matrix(embeddings_path, dataset.embeddings)
    with open(labels_path, "w", encoding="utf-8") as fh:
        for idx in range(dataset.n):
            rec: dict[str, object] = {"idx": idx}
            tid = int(dataset.type_ids[idx])
            gid = int(dataset.gold_type_ids[idx])
            if tid >= 0:
                rec["role"] = ROLE_SEEN
                rec["type"] = dataset.seen_type_names[tid]
            else:
                rec["role"] = ROLE_UNSEEN
                if gid >= 0:
                    rec["gold_type"] = dataset.gold_type_names[gid]
            fh.write(json.dumps(rec) + "\n")
    if augmented_path is not None:
        if dataset.augmented is None:
            raise ContractError("dataset has no augmented matrix to save")
        save_matrix(augmented_path, dataset.augmented)


def save_assignments(path: str | Path, indices: Sequence[int], clusters: Sequence[int]) -> None:
    """Write cluster assignments as JSONL rows of original dataset indices."""
    if len(indices) != len(clusters):
        raise ContractError("indices and clusters must have equal length")
    with open(path, "w", encoding="utf-8") as fh:
        for idx, cluster in zip(indices, clusters):
            fh.write(json.dumps({"idx": int(idx), "cluster": int(cluster)}) + "\n")


def load_assignments(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read assignment JSONL into (indices, clusters) int arrays."""
    indices: list[int] = []
    clusters: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(rec.get("idx"), int) or not isinstance(rec.get("cluster"), int):
                raise FormatError(f"{path}:{lineno}: expected integer idx and cluster")
            indices.append(rec["idx"])
            clusters.append(rec["cluster"])
    if len(set(indices)) != len(indices):
        raise DataError(f"{path}: duplicate row indices")
    return np.asarray(indices, dtype=np.int64), np.asarray(clusters, dtype=np.int64)


# ---------------------------------------------------------------------------
# Synthetic data


def _unit_centers(rng: np.random.Generator, n_types: int, d: int) -> np.ndarray:
    centers = rng.standard_normal((n_types, d))
    return centers / np.linalg.norm(centers, axis=1, keepdims=True)


def _type_name(t: int) -> str:
    return f"type_{t:02d}"


def generate_synthetic(
    seed: int,
    n_seen_types: int,
    n_unseen_types: int,
    per_type: int,
    d: int,
    noise_sigma: float,
    aug_sigma: float,
) -> EmbeddingDataset:
    """Sample a dataset of per-type Gaussian blobs around unit-norm centers.

    The augmented matrix jitters each generated point again with
    ``aug_sigma``, standing in for paraphrase-style augmentation. Identical
    seeds give bit-identical datasets.
    """
    if min(n_seen_types, n_unseen_types, per_type, d) < 1:
        raise ContractError("all counts must be >= 1")
    if noise_sigma < 0 or aug_sigma < 0:
        raise ContractError("sigmas must be >= 0")

    total = n_seen_types + n_unseen_types
    n = total * per_type
    rng = np.random.default_rng(seed)
    centers = _unit_centers(rng, total, d)
    base = np.repeat(centers, per_type, axis=0)
    points = base + rng.standard_normal((n, d)) * noise_sigma
    augmented = points + rng.standard_normal((n, d)) * aug_sigma

    type_ids = np.full(n, -1, dtype=np.int64)
    gold_ids = np.full(n, -1, dtype=np.int64)
    row_types = np.repeat(np.arange(total), per_type)
    seen_rows = row_types < n_seen_types
    type_ids[seen_rows] = row_types[seen_rows]
    gold_ids[~seen_rows] = row_types[~seen_rows] - n_seen_types

    return EmbeddingDataset(
        embeddings=points.astype(np.float32),
        type_ids=type_ids,
        gold_type_ids=gold_ids,
        seen_type_names=[_type_name(t) for t in range(n_seen_types)],
        gold_type_names=[_type_name(t) for t in range(n_seen_types, total)],
        augmented=augmented.astype(np.float32),
    )


def synthetic_name_corpus(
    seed: int, n_seen_types: int, n_unseen_types: int, d: int
) -> "NameCorpus":
    """Type-name corpus whose embeddings are the generator's true centers.

    Reproduces the centers drawn by :func:`generate_synthetic` for the same
    seed, so name ranking against synthetic clusters is meaningful.
    """
    total = n_seen_types + n_unseen_types
    centers = _unit_centers(np.random.default_rng(seed), total, d)
    return NameCorpus(
        labels=[_type_name(t) for t in range(total)],
        embeddings=centers.astype(np.float32),
        kind="type_names",
    )


def synthetic_frame_package(
    seed: int, n_seen_types: int, n_unseen_types: int, d: int
) -> tuple["FrameHierarchy", "NameCorpus"]:
    """Toy frame hierarchy aligned with the synthetic types.

    Each type maps to one frame (embedding = the type center) that has a
    single child frame (a jittered copy of the center).
    """
    total = n_seen_types + n_unseen_types
    centers = _unit_centers(np.random.default_rng(seed), total, d)
    jitter = np.random.default_rng([seed, 7]).standard_normal((total, d)) * 0.05
    children = centers + jitter
    children /= np.linalg.norm(children, axis=1, keepdims=True)

    labels: list[str] = []
    rows: list[np.ndarray] = []
    edges: list[tuple[str, str]] = []
    mapping: dict[str, set[str]] = {}
    for t in range(total):
        frame = f"frame_{t:02d}"
        sub = f"{frame}_sub"
        labels.extend([frame, sub])
        rows.extend([centers[t], children[t]])
        edges.append((frame, sub))
        mapping[_type_name(t)] = {frame}
    corpus = NameCorpus(
        labels=labels,
        embeddings=np.asarray(rows, dtype=np.float32),
        kind="frame_definitions",
    )
    hierarchy = FrameHierarchy(
        frames=set(labels), parent_child_edges=edges, ace_to_frames=mapping
    )
    return hierarchy, corpus


# ---------------------------------------------------------------------------
# Name / frame-definition corpora


@dataclass
class NameCorpus:
    """Labelled embeddings for ranking targets (type names or frame defs)."""

    labels: list[str]
    embeddings: np.ndarray
    kind: str = "type_names"

    def __post_init__(self) -> None:
        self.embeddings = np.asarray(self.embeddings, dtype=np.float32)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.labels):
            raise FormatError(
                f"corpus has {len(self.labels)} labels but embedding shape "
                f"{self.embeddings.shape}"
            )
        if len(set(self.labels)) != len(self.labels):
            raise DataError("corpus labels must be unique")
        if not np.isfinite(self.embeddings).all():
            raise DataError("corpus embeddings contain NaN or Inf")

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DataError(f"label {label!r} not present in corpus") from None


def save_name_corpus(
    corpus: NameCorpus, embeddings_path: str | Path, labels_path: str | Path
) -> None:
    save_matrix(embeddings_path, corpus.embeddings)
    Path(labels_path).write_text(
        "".join(label + "\n" for label in corpus.labels), encoding="utf-8"
    )


def load_name_corpus(
    embeddings_path: str | Path, labels_path: str | Path, kind: str = "type_names"
) -> NameCorpus:
    embeddings = load_matrix(embeddings_path)
    labels = Path(labels_path).read_text(encoding="utf-8").splitlines()
    labels = [line for line in labels if line]
    if len(labels) != embeddings.shape[0]:
        raise FormatError(
            f"{labels_path}: {len(labels)} labels for {embeddings.shape[0]} rows"
        )
    return NameCorpus(labels=labels, embeddings=embeddings, kind=kind)


# ---------------------------------------------------------------------------
# Frame hierarchy


@dataclass
class FrameHierarchy:
    """Frame label set with parent->child edges and an event-type mapping."""

    frames: set[str]
    parent_child_edges: list[tuple[str, str]]
    ace_to_frames: dict[str, set[str]]
    _children: dict[str, set[str]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for parent, child in self.parent_child_edges:
            if parent not in self.frames or child not in self.frames:
                raise FormatError(f"edge ({parent!r}, {child!r}) references unknown frame")
        for ace_type, mapped in self.ace_to_frames.items():
            if not mapped:
                raise FormatError(f"mapping for {ace_type!r} is empty")
            unknown = mapped - self.frames
            if unknown:
                raise FormatError(f"mapping for {ace_type!r} references unknown {unknown}")
        self._children = {}
        for parent, child in self.parent_child_edges:
            self._children.setdefault(parent, set()).add(child)
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        # Kahn's algorithm over the edge-induced subgraph.
        indeg: dict[str, int] = {}
        for parent, child in self.parent_child_edges:
            indeg.setdefault(parent, 0)
            indeg[child] = indeg.get(child, 0) + 1
        queue = [f for f, deg in indeg.items() if deg == 0]
        seen = 0
        while queue:
            node = queue.pop()
            seen += 1
            for child in self._children.get(node, ()):
                indeg[child] -= 1
                if indeg[child] == 0:
                    queue.append(child)
        if seen != len(indeg):
            raise DataError("frame hierarchy contains a cycle")

    def children(self, frame: str) -> set[str]:
        return set(self._children.get(frame, ()))

    def descendants(self, frame: str) -> set[str]:
        out: set[str] = set()
        stack = list(self._children.get(frame, ()))
        while stack:
            node = stack.pop()
            if node not in out:
                out.add(node)
                stack.extend(self._children.get(node, ()))
        return out

    def valid_frames(self, ace_type: str, expand_descendants: bool = False) -> set[str]:
        """Mapped frames plus their (direct or transitive) children."""
        if ace_type not in self.ace_to_frames:
            raise DataError(f"no frame mapping for type {ace_type!r}")
        valid = set(self.ace_to_frames[ace_type])
        for frame in list(valid):
            valid |= self.descendants(frame) if expand_descendants else self.children(frame)
        return valid


def _read_tsv(path: str | Path, n_cols: int) -> list[list[str]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != n_cols:
                raise FormatError(f"{path}:{lineno}: expected {n_cols} columns, got {len(parts)}")
            rows.append([p.strip() for p in parts])
    return rows


def load_frame_hierarchy(
    frames_path: str | Path, edges_path: str | Path, mapping_path: str | Path
) -> FrameHierarchy:
    """Read frame TSVs: (frame, definition), (parent, child), (type, frames).

    Multi-frame mappings use ``|`` separators in the second mapping column.
    """
    frames = {row[0] for row in _read_tsv(frames_path, 2)}
    edges = [(row[0], row[1]) for row in _read_tsv(edges_path, 2)]
    mapping: dict[str, set[str]] = {}
    for ace_type, frames_field in _read_tsv(mapping_path, 2):
        mapping[ace_type] = {f.strip() for f in frames_field.split("|") if f.strip()}
    return FrameHierarchy(frames=frames, parent_child_edges=edges, ace_to_frames=mapping)


def save_frame_hierarchy(
    hierarchy: FrameHierarchy,
    definitions: dict[str, str],
    frames_path: str | Path,
    edges_path: str | Path,
    mapping_path: str | Path,
) -> None:
    """Write the three frame TSVs (frames sorted for stable output)."""
    with open(frames_path, "w", encoding="utf-8") as fh:
        for frame in sorted(hierarchy.frames):
            fh.write(f"{frame}\t{definitions.get(frame, frame)}\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for parent, child in hierarchy.parent_child_edges:
            fh.write(f"{parent}\t{child}\n")
    with open(mapping_path, "w", encoding="utf-8") as fh:
        for ace_type in sorted(hierarchy.ace_to_frames):
            joined = " | ".join(sorted(hierarchy.ace_to_frames[ace_type]))
            fh.write(f"{ace_type}\t{joined}\n")
