"""Training loop for the attention head: shuffled minibatches, Adam
updates, and a silhouette-based sliding-window rule that picks which
epoch's checkpoint to keep.

The stopping score clusters the unseen rows with average linkage over the
learned dot-product distance (dropout off) and takes their silhouette;
seen rows never enter the stopping decision.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import clustering as clustering_mod
from .clusterer import ClustererParams, backward, forward, init_params
from .dataio import EmbeddingDataset, NameCorpus
from .errors import ConfigError, ContractError, DegenerateBatchError
from .losses import auxiliary_loss, combined_contrastive
from .supervision import build_labels


@dataclass
class TrainConfig:
    batch_size: int = 10
    max_epochs: int = 10
    learning_rate: float = 1e-4
    margin: float = 0.5
    window_size: int = 5
    n_clusters_for_stopping: int | None = None
    seed: int = 0
    lambda_aux: float = 0.0
    dropout_rate: float = 0.1
    depth: int = 1

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.window_size < 1:
            raise ConfigError(f"window_size must be >= 1, got {self.window_size}")
        if not 0.0 < self.margin < 1.0:
            raise ConfigError(f"margin must lie in (0, 1), got {self.margin}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.learning_rate < 0.0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.lambda_aux < 0.0:
            raise ConfigError(f"lambda_aux must be >= 0, got {self.lambda_aux}")


@dataclass
class TrainTrace:
    epochs: list[dict] = field(default_factory=list)
    selected_epoch: int = 0
    n_clusters_for_stopping: int = 0
    seed: int = 0

    def silhouettes(self) -> list[float]:
        return [e["silhouette"] for e in self.epochs]

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "selected_epoch": self.selected_epoch,
            "n_clusters_for_stopping": self.n_clusters_for_stopping,
            "seed": self.seed,
        }


class Adam:
    """Standard Adam with bias correction; state kept in float64."""

    def __init__(self, n_params: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def silhouette(distance: np.ndarray, assignment: np.ndarray) -> float:
    """Mean silhouette over samples; singleton-cluster samples score 0."""
    D = np.asarray(distance, dtype=np.float64)
    assignment = np.asarray(assignment, dtype=np.int64)
    n = D.shape[0]
    if D.shape != (n, n) or assignment.shape != (n,):
        raise ContractError("distance/assignment shapes disagree")
    labels = np.unique(assignment)
    if labels.size < 2:
        raise ContractError("silhouette is undefined for a single cluster")

    onehot = (assignment[:, None] == labels[None, :]).astype(np.float64)
    sums = D @ onehot
    sizes = onehot.sum(axis=0)
    scores = np.zeros(n)
    for i in range(n):
        own = int(np.searchsorted(labels, assignment[i]))
        if sizes[own] <= 1:
            continue
        a = sums[i, own] / (sizes[own] - 1.0)
        other = [sums[i, c] / sizes[c] for c in range(labels.size) if c != own]
        b = min(other)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def select_stop_epoch(scores: list[float], window_size: int) -> int:
    """Best-average sliding window, then the best raw epoch inside it.

    Windows are contiguous runs of min(window_size, len) epochs; ties pick
    the earliest window and, inside it, the earliest epoch.
    """
    if not scores:
        raise ContractError("need at least one score")
    if window_size < 1:
        raise ContractError("window_size must be >= 1")
    length = len(scores)
    w = min(window_size, length)
    best_avg = -np.inf
    best_start = 0
    for start in range(length - w + 1):
        avg = float(np.mean(scores[start : start + w]))
        if avg > best_avg:
            best_avg = avg
            best_start = start
    window = scores[best_start : best_start + w]
    return best_start + int(np.argmax(window))


def stopping_silhouette(
    params: ClustererParams, embeddings: np.ndarray, n_clusters: int
) -> float:
    """Silhouette of the learned dot-product distances, dropout off."""
    fwd = forward(params, embeddings, training=False)
    dist = clustering_mod.distance_from_attention(fwd.Q, fwd.K, "dot")
    clusters = clustering_mod.agglomerative(dist, n_clusters)
    return silhouette(dist.D, clusters.assignment)


def train(
    dataset: EmbeddingDataset,
    config: TrainConfig,
    name_corpus: NameCorpus | None = None,
) -> tuple[ClustererParams, TrainTrace]:
    """Run the full loop and return the checkpoint at the selected epoch.

    Deterministic given (dataset, config): shuffling, dropout seeds, and
    parameter updates all derive from config.seed.
    """
    if config.lambda_aux > 0.0 and name_corpus is None:
        raise ConfigError("lambda_aux > 0 requires a type-name corpus")

    unseen = dataset.unseen_indices
    if unseen.size < 2:
        raise ConfigError("stopping silhouette needs at least 2 unseen rows")
    n_stop = config.n_clusters_for_stopping
    if n_stop is None:
        gold = dataset.gold_type_ids[unseen]
        if (gold < 0).any():
            raise ConfigError(
                "n_clusters_for_stopping not set and unseen rows lack gold types"
            )
        n_stop = int(np.unique(gold).size)
    if not 2 <= n_stop <= unseen.size:
        raise ConfigError(
            f"n_clusters_for_stopping={n_stop} must lie in [2, {unseen.size}]"
        )

    params = init_params(config.seed, dataset.d, config.dropout_rate, config.depth)
    adam = Adam(params.n_params, config.learning_rate)
    shuffle_rng = np.random.default_rng(config.seed)
    dropout_seed_rng = np.random.default_rng([config.seed, 17])
    unseen_X = dataset.embeddings[unseen]

    trace = TrainTrace(n_clusters_for_stopping=n_stop, seed=config.seed)
    snapshots: list[np.ndarray] = []

    for epoch in range(config.max_epochs):
        perm = shuffle_rng.permutation(dataset.n)
        batches = [
            perm[start : start + config.batch_size]
            for start in range(0, dataset.n, config.batch_size)
        ]
        batches = [b for b in batches if b.size >= 2]
        if not batches:
            raise DegenerateBatchError("dataset too small to form any batch")

        sums = {"l_c": 0.0, "l_a": 0.0, "total": 0.0}
        steps = 0
        skipped = 0
        for rows in batches:
            fwd_seed = int(dropout_seed_rng.integers(2**63))
            aug_seed = int(dropout_seed_rng.integers(2**63))
            X = dataset.embeddings[rows]
            tags = dataset.type_ids[rows]
            tensors = build_labels(tags, dataset.n_seen_types)
            fwd = forward(params, X, training=True, rng_seed=fwd_seed)
            fwd_aug = None
            if dataset.augmented is not None:
                fwd_aug = forward(
                    params, dataset.augmented[rows], training=True, rng_seed=aug_seed
                )
            try:
                comb = combined_contrastive(fwd, fwd_aug, tensors, config.margin)
            except DegenerateBatchError:
                skipped += 1
                continue

            l_a = 0.0
            grad_aux = None
            if config.lambda_aux > 0.0:
                assert name_corpus is not None
                l_a, grad_aux = auxiliary_loss(
                    fwd.aux_out, name_corpus, tags, dataset.seen_type_names
                )
                grad_aux = grad_aux * config.lambda_aux

            grad_flat, _ = backward(
                params, fwd, grad_aux_out=grad_aux, grad_q=comb.grad_q, grad_k=comb.grad_k
            )
            if fwd_aug is not None:
                grad_aug, _ = backward(
                    params, fwd_aug, grad_q=comb.grad_q_aug, grad_k=comb.grad_k_aug
                )
                grad_flat = grad_flat + grad_aug

            new_flat = adam.step(params.flat.astype(np.float64), grad_flat)
            params = ClustererParams(
                flat=new_flat.astype(np.float32),
                d=params.d,
                depth=params.depth,
                dropout_rate=params.dropout_rate,
            )
            sums["l_c"] += comb.l_c
            sums["l_a"] += l_a
            sums["total"] += comb.l_c + config.lambda_aux * l_a
            steps += 1

        if steps == 0:
            raise DegenerateBatchError(
                f"all {len(batches)} batches were fully masked in epoch {epoch}"
            )

        score = stopping_silhouette(params, unseen_X, n_stop)
        snapshots.append(params.flat.copy())
        trace.epochs.append(
            {
                "epoch": epoch,
                "l_c": sums["l_c"] / steps,
                "l_a": sums["l_a"] / steps,
                "total": sums["total"] / steps,
                "silhouette": score,
                "checkpoint": f"epoch-{epoch}",
                "steps": steps,
                "skipped_steps": skipped,
            }
        )

    selected = select_stop_epoch(trace.silhouettes(), config.window_size)
    trace.selected_epoch = selected
    chosen = ClustererParams(
        flat=snapshots[selected],
        d=dataset.d,
        depth=config.depth,
        dropout_rate=config.dropout_rate,
    )
    return chosen, trace


# ---------------------------------------------------------------------------
# Trace serialization


def write_trace_json(trace: TrainTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trace.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_silhouette_csv(trace: TrainTrace, path: str | Path, window_size: int) -> None:
    """CSV of (epoch, raw, windowed); windowed is the trailing-window mean."""
    scores = trace.silhouettes()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "silhouette", "windowed"])
        for epoch, raw in enumerate(scores):
            lo = max(0, epoch - window_size + 1)
            windowed = float(np.mean(scores[lo : epoch + 1]))
            writer.writerow([epoch, f"{raw:.10f}", f"{windowed:.10f}"])
