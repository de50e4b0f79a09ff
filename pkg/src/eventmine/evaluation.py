"""Clustering quality metrics and the two retrieval tasks.

All pair-counting and entropy quantities come from one contingency table;
entropies use natural log (every reported metric is a ratio, so the base
cancels). Metric values are fractions in [0, 1] (ARI may go negative);
rendering as percentages is left to the report layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import Clustering
from .dataio import FrameHierarchy, NameCorpus
from .errors import ContractError, DataError, NumericsError

NAME_HITS_AT = (1, 3, 5, 10, 15)
FRAME_HITS_AT = (1, 5, 10, 50, 100)

METRIC_COLUMNS = (
    "n_clusters",
    "geometric_nmi",
    "fowlkes_mallows",
    "completeness",
    "homogeneity",
    "v_measure",
    "ari",
    "average_purity",
    "type_representation",
)


@dataclass
class MetricReport:
    geometric_nmi: float
    fowlkes_mallows: float
    completeness: float
    homogeneity: float
    v_measure: float
    ari: float
    average_purity: float
    type_representation: float
    n_clusters: int

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_COLUMNS}


def _contingency(gold: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """Counts table indexed (cluster, gold type)."""
    clusters, c_idx = np.unique(predicted, return_inverse=True)
    types, t_idx = np.unique(gold, return_inverse=True)
    table = np.zeros((clusters.size, types.size), dtype=np.int64)
    np.add.at(table, (c_idx, t_idx), 1)
    return table


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def _pair_counts(table: np.ndarray) -> tuple[float, float, float, float]:
    def comb2(x: np.ndarray) -> float:
        return float((x * (x - 1) / 2).sum())

    n = int(table.sum())
    tp = comb2(table.astype(np.float64))
    same_pred = comb2(table.sum(axis=1).astype(np.float64))
    same_gold = comb2(table.sum(axis=0).astype(np.float64))
    total = n * (n - 1) / 2
    return tp, same_pred - tp, same_gold - tp, total - same_pred - same_gold + tp


def clustering_metrics(
    gold: np.ndarray, predicted: Clustering, total_unseen_types: int | None = None
) -> MetricReport:
    """Full metric report for a predicted clustering against gold types."""
    gold = np.asarray(gold, dtype=np.int64)
    pred = predicted.assignment
    n = gold.shape[0]
    if pred.shape != (n,):
        raise ContractError("gold and predicted lengths disagree")
    if n < 2:
        raise ContractError("metrics need at least 2 samples")

    table = _contingency(gold, pred)
    n_f = float(n)
    cluster_sizes = table.sum(axis=1)
    type_sizes = table.sum(axis=0)
    h_pred = _entropy(cluster_sizes, n)
    h_gold = _entropy(type_sizes, n)

    nz = table > 0
    joint = table[nz] / n_f
    row_sizes = np.broadcast_to(cluster_sizes[:, None], table.shape)[nz]
    col_sizes = np.broadcast_to(type_sizes[None, :], table.shape)[nz]
    mi = float((joint * np.log(n_f * table[nz] / (row_sizes * col_sizes))).sum())

    if h_pred == 0.0 and h_gold == 0.0:
        nmi = 1.0
    elif h_pred == 0.0 or h_gold == 0.0:
        nmi = 0.0
    else:
        nmi = mi / float(np.sqrt(h_pred * h_gold))

    # Conditional entropies from the same table.
    h_gold_given_pred = float(-(joint * np.log(table[nz] / row_sizes)).sum())
    h_pred_given_gold = float(-(joint * np.log(table[nz] / col_sizes)).sum())
    homogeneity = 1.0 if h_gold == 0.0 else 1.0 - h_gold_given_pred / h_gold
    completeness = 1.0 if h_pred == 0.0 else 1.0 - h_pred_given_gold / h_pred
    hc = homogeneity + completeness
    v_measure = 0.0 if hc == 0.0 else 2.0 * homogeneity * completeness / hc

    tp, fp, fn, _ = _pair_counts(table)
    denom = np.sqrt((tp + fp) * (tp + fn))
    fowlkes_mallows = 0.0 if denom == 0.0 else float(tp / denom)

    index = tp
    expected = (tp + fp) * (tp + fn) / (n_f * (n_f - 1) / 2) if n > 1 else 0.0
    max_index = ((tp + fp) + (tp + fn)) / 2.0
    ari = 1.0 if max_index == expected else float((index - expected) / (max_index - expected))

    total_types = total_unseen_types if total_unseen_types is not None else int(np.unique(gold).size)
    avg_purity, representation = purity_and_representation(gold, predicted, total_types)

    return MetricReport(
        geometric_nmi=nmi,
        fowlkes_mallows=fowlkes_mallows,
        completeness=completeness,
        homogeneity=homogeneity,
        v_measure=v_measure,
        ari=ari,
        average_purity=avg_purity,
        type_representation=representation,
        n_clusters=predicted.k,
    )


def purity_and_representation(
    gold: np.ndarray, predicted: Clustering, total_unseen_types: int
) -> tuple[float, float]:
    """Unweighted mean per-cluster majority fraction, and the fraction of
    gold types that are the majority type of at least one cluster.

    Majority ties inside a cluster resolve to the smallest gold type id.
    """
    gold = np.asarray(gold, dtype=np.int64)
    if total_unseen_types < 1:
        raise ContractError("total_unseen_types must be >= 1")
    purities = []
    majority_types = set()
    for c in range(predicted.k):
        members = gold[predicted.assignment == c]
        counts = np.bincount(members)
        majority = int(np.argmax(counts))
        majority_types.add(majority)
        purities.append(counts[majority] / members.size)
    return float(np.mean(purities)), len(majority_types) / total_unseen_types


# ---------------------------------------------------------------------------
# Retrieval-style ranking


@dataclass
class RankingReport:
    ranks: list[int]
    mean_rank: float
    mrr: float
    hits: dict[int, float]

    def to_dict(self) -> dict:
        out: dict[str, object] = {
            "ranks": self.ranks,
            "mean_rank": self.mean_rank,
            "mrr": self.mrr,
        }
        for m in sorted(self.hits):
            out[f"hits_at_{m}"] = self.hits[m]
        return out


def _aggregate(ranks: list[int], hits_at: tuple[int, ...]) -> RankingReport:
    arr = np.asarray(ranks, dtype=np.float64)
    return RankingReport(
        ranks=list(map(int, ranks)),
        mean_rank=float(arr.mean()),
        mrr=float((1.0 / arr).mean()),
        hits={m: float((arr <= m).mean()) for m in hits_at},
    )


def _ranked_labels(centroid: np.ndarray, corpus: NameCorpus) -> list[int]:
    """Corpus indices sorted by descending cosine to the centroid; cosine
    ties break in lexicographic label order."""
    c = np.asarray(centroid, dtype=np.float64)
    cn = float(np.linalg.norm(c))
    if cn == 0.0:
        raise NumericsError("zero-norm centroid in ranking")
    emb = corpus.embeddings.astype(np.float64)
    norms = np.linalg.norm(emb, axis=1)
    if (norms == 0.0).any():
        raise NumericsError("zero-norm corpus embedding in ranking")
    sims = emb @ c / (norms * cn)
    return sorted(range(len(corpus.labels)), key=lambda j: (-sims[j], corpus.labels[j]))


def rank_names(
    centroids: np.ndarray,
    corpus: NameCorpus,
    gold_labels: list[str],
    hits_at: tuple[int, ...] = NAME_HITS_AT,
) -> RankingReport:
    """Rank the name corpus against each cluster centroid; R_i is the gold
    name's 1-based position."""
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.shape[0] != len(gold_labels):
        raise ContractError("one gold label per centroid required")
    ranks = []
    for centroid, gold in zip(centroids, gold_labels):
        target = corpus.index_of(gold)
        order = _ranked_labels(centroid, corpus)
        ranks.append(order.index(target) + 1)
    return _aggregate(ranks, hits_at)


def rank_frames(
    centroids: np.ndarray,
    frame_corpus: NameCorpus,
    hierarchy: FrameHierarchy,
    gold_ace_labels: list[str],
    expand_descendants: bool = False,
    hits_at: tuple[int, ...] = FRAME_HITS_AT,
) -> RankingReport:
    """Rank frames per centroid; R_i is the best rank among valid frames
    (mapped frames plus their children, transitively when requested)."""
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.shape[0] != len(gold_ace_labels):
        raise ContractError("one gold event-type label per centroid required")
    label_pos = {label: i for i, label in enumerate(frame_corpus.labels)}
    ranks = []
    for centroid, gold in zip(centroids, gold_ace_labels):
        valid = hierarchy.valid_frames(gold, expand_descendants)
        targets = {label_pos[f] for f in valid if f in label_pos}
        if not targets:
            raise DataError(f"no valid frame for {gold!r} is present in the corpus")
        order = _ranked_labels(centroid, frame_corpus)
        ranks.append(min(order.index(t) for t in targets) + 1)
    return _aggregate(ranks, hits_at)


def majority_gold_labels(
    gold: np.ndarray, predicted: Clustering, gold_names: list[str]
) -> list[str]:
    """Per-cluster majority gold type name (ties to the smallest type id)."""
    gold = np.asarray(gold, dtype=np.int64)
    labels = []
    for c in range(predicted.k):
        counts = np.bincount(gold[predicted.assignment == c])
        labels.append(gold_names[int(np.argmax(counts))])
    return labels
