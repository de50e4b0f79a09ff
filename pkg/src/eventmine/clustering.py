"""Clustering backends over precomputed distances.

Average-linkage agglomeration, manifold-smoothed weights in the UMAP
style, and affinity propagation are written out here rather than imported:
their tie-breaking and update rules are pinned by tests, and the library
versions inject noise or reorder merges in ways that break bitwise
reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractError, NumericsError

DISTANCE_SOURCES = ("attn_dot", "attn_cosine", "embedding_cosine", "manifold")


@dataclass
class DistanceMatrix:
    """Symmetric zero-diagonal pairwise distances with provenance."""

    D: np.ndarray
    source: str

    def __post_init__(self) -> None:
        self.D = np.asarray(self.D, dtype=np.float64)
        n = self.D.shape[0]
        if self.D.ndim != 2 or self.D.shape != (n, n):
            raise ContractError(f"distance matrix must be square, got {self.D.shape}")
        if self.source not in DISTANCE_SOURCES:
            raise ContractError(f"unknown distance source {self.source!r}")
        if not np.isfinite(self.D).all():
            raise NumericsError("distance matrix contains NaN or Inf")
        if not np.allclose(self.D, self.D.T, atol=1e-9):
            raise ContractError("distance matrix is not symmetric")
        if np.abs(np.diagonal(self.D)).max(initial=0.0) > 1e-12:
            raise ContractError("distance matrix diagonal is not zero")
        if self.D.min(initial=0.0) < -1e-12:
            raise ContractError("distance matrix has negative entries")
        # Make symmetry and the zero diagonal exact.
        self.D = np.maximum((self.D + self.D.T) / 2.0, 0.0)
        np.fill_diagonal(self.D, 0.0)

    @property
    def n(self) -> int:
        return self.D.shape[0]


@dataclass
class Clustering:
    """Cluster ids per row, 0-based and contiguous, every cluster nonempty."""

    assignment: np.ndarray
    k: int
    converged: bool = True

    def __post_init__(self) -> None:
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        present = np.unique(self.assignment)
        if self.k < 1 or not np.array_equal(present, np.arange(self.k)):
            raise ContractError(
                f"assignment must use contiguous ids 0..{self.k - 1}, got {present}"
            )


def cluster_centroids(clustering: Clustering, embeddings: np.ndarray) -> np.ndarray:
    """k x d matrix of mean member embeddings, in cluster-id order."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.shape[0] != clustering.assignment.shape[0]:
        raise ContractError("embeddings rows do not match assignment length")
    out = np.empty((clustering.k, embeddings.shape[1]))
    for c in range(clustering.k):
        out[c] = embeddings[clustering.assignment == c].mean(axis=0)
    return out


# ---------------------------------------------------------------------------
# Distance construction


def distance_from_attention(Q: np.ndarray, K: np.ndarray, variant: str = "dot") -> DistanceMatrix:
    """Pairwise distances from learned Q/K features.

    dot: 1 - mean of the two directed sigmoid(q.k/sqrt(d)) similarities.
    cosine: mean of the two directed cosine distances between q and k rows.
    """
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if Q.shape != K.shape or Q.ndim != 2:
        raise ContractError(f"Q/K shapes {Q.shape}/{K.shape} must match")
    if not (np.isfinite(Q).all() and np.isfinite(K).all()):
        raise NumericsError("Q or K contains NaN or Inf")
    if variant == "dot":
        sim = expit((Q @ K.T) / np.sqrt(Q.shape[1]))
        D = 1.0 - (sim + sim.T) / 2.0
        source = "attn_dot"
    elif variant == "cosine":
        qn = np.linalg.norm(Q, axis=1, keepdims=True)
        kn = np.linalg.norm(K, axis=1, keepdims=True)
        if (qn == 0).any() or (kn == 0).any():
            raise NumericsError("zero-norm row under cosine distance")
        cosdist = 1.0 - (Q / qn) @ (K / kn).T
        D = (cosdist + cosdist.T) / 2.0
        source = "attn_cosine"
    else:
        raise ContractError(f"unknown attention distance variant {variant!r}")
    D = np.clip(D, 0.0, None)
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(D=D, source=source)


def cosine_distances(X: np.ndarray) -> DistanceMatrix:
    """1 - cosine similarity between raw embedding rows."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if (norms == 0).any():
        raise NumericsError("zero-norm embedding row under cosine distance")
    D = 1.0 - (X / norms) @ (X / norms).T
    D = np.clip(D, 0.0, None)
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(D=D, source="embedding_cosine")


# ---------------------------------------------------------------------------
# Agglomerative average linkage


def agglomerative(distance: DistanceMatrix, k: int) -> Clustering:
    """Average-linkage (UPGMA) merges down to exactly k clusters.

    Ties break on the lexicographically smallest (min member id, max member
    id) pair, realized by keeping clusters sorted by their smallest original
    index and scanning the upper triangle row-major.
    """
    n = distance.n
    if not 1 <= k <= n:
        raise ContractError(f"k must be in [1, {n}], got {k}")
    A = distance.D.copy()
    reps = list(range(n))
    members: list[list[int]] = [[i] for i in range(n)]
    sizes = np.ones(n)

    m = n
    while m > k:
        iu = np.triu_indices(m, 1)
        flat = int(np.argmin(A[iu]))
        i, j = int(iu[0][flat]), int(iu[1][flat])
        # Weighted average of the two merged rows, sizes as weights.
        merged_row = (sizes[i] * A[i] + sizes[j] * A[j]) / (sizes[i] + sizes[j])
        A[i, :] = merged_row
        A[:, i] = merged_row
        A[i, i] = 0.0
        members[i].extend(members[j])
        sizes[i] += sizes[j]
        A = np.delete(np.delete(A, j, axis=0), j, axis=1)
        sizes = np.delete(sizes, j)
        del members[j], reps[j]
        m -= 1

    assignment = np.empty(n, dtype=np.int64)
    for cluster_id, member_list in enumerate(members):
        assignment[member_list] = cluster_id
    return Clustering(assignment=assignment, k=k)


# ---------------------------------------------------------------------------
# Manifold-smoothed weights


def solve_smoothing_scale(neighbor_dists: np.ndarray, rho: float, tol: float = 1e-5) -> float:
    """Bisection solve of sum_j exp(-max(0, d_j - rho)/sigma) = log2(k).

    The left side is increasing in sigma, from the count of neighbors at or
    inside rho up to k; when the target falls outside that range the nearer
    bracket edge is returned.
    """
    d = np.asarray(neighbor_dists, dtype=np.float64)
    k = d.shape[0]
    if k < 2:
        raise ContractError("sigma solve needs at least 2 neighbor distances")
    target = np.log2(k)
    gaps = np.maximum(0.0, d - rho)

    def lhs(sigma: float) -> float:
        return float(np.exp(-gaps / sigma).sum())

    lo, hi = 1e-12, 1.0
    if lhs(lo) >= target:
        return lo
    for _ in range(64):
        if lhs(hi) >= target:
            break
        hi *= 2.0
    else:
        return hi
    for _ in range(200):
        mid = (lo + hi) / 2.0
        val = lhs(mid)
        if abs(val - target) <= tol:
            return mid
        if val < target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def manifold_weights(distance: DistanceMatrix, k_neighbors: int | None = None) -> DistanceMatrix:
    """Smooth distances into fuzzy neighborhood weights, then back to 1 - w.

    Per point: rho is the smallest strictly positive neighbor distance,
    sigma is solved so the smoothed neighborhood has effective size
    log2(k), and directed weights exp(-max(0, d - rho)/sigma) are
    symmetrized with w + w' - w*w'. Default k_neighbors covers every other
    point. Points duplicating their whole neighborhood get weight 1 there.
    """
    n = distance.n
    if n < 3:
        raise ContractError("manifold weights need at least 3 points")
    if k_neighbors is None:
        k_neighbors = n
    if k_neighbors < 2:
        raise ContractError(f"k_neighbors must be >= 2, got {k_neighbors}")
    k_eff = min(k_neighbors, n - 1)

    D = distance.D
    W = np.zeros((n, n))
    for i in range(n):
        others = np.concatenate([np.arange(i), np.arange(i + 1, n)])
        order = np.argsort(D[i, others], kind="stable")
        neighbors = others[order[:k_eff]]
        dists = D[i, neighbors]
        positive = dists[dists > 0.0]
        if positive.size == 0:
            W[i, neighbors] = 1.0
            continue
        rho = float(positive.min())
        sigma = solve_smoothing_scale(dists, rho)
        W[i, neighbors] = np.exp(-np.maximum(0.0, dists - rho) / sigma)

    W_sym = W + W.T - W * W.T
    out = np.clip(1.0 - W_sym, 0.0, 1.0)
    np.fill_diagonal(out, 0.0)
    return DistanceMatrix(D=out, source="manifold")


# ---------------------------------------------------------------------------
# Affinity propagation


def affinity_propagation(
    similarity: np.ndarray,
    damping: float = 0.9,
    max_iter: int = 1000,
    convergence_iter: int = 50,
    preference: float | None = None,
) -> Clustering:
    """Exemplar-based clustering by responsibility/availability messages.

    Deterministic: no noise is added to the similarities, the preference
    defaults to the median off-diagonal similarity, and convergence means
    the exemplar set held still for ``convergence_iter`` iterations.
    """
    S = np.array(similarity, dtype=np.float64)
    n = S.shape[0]
    if S.ndim != 2 or S.shape != (n, n):
        raise ContractError(f"similarity must be square, got {S.shape}")
    if not np.isfinite(S).all():
        raise NumericsError("similarity contains NaN or Inf")
    if not 0.5 <= damping < 1.0:
        raise ContractError(f"damping must be in [0.5, 1), got {damping}")
    if n == 1:
        return Clustering(assignment=np.zeros(1, dtype=np.int64), k=1)

    if preference is None:
        off = S[~np.eye(n, dtype=bool)]
        preference = float(np.median(off))
    np.fill_diagonal(S, preference)

    R = np.zeros((n, n))
    A = np.zeros((n, n))
    idx = np.arange(n)
    stable_for = 0
    last_exemplars: np.ndarray | None = None
    converged = False

    for _ in range(max_iter):
        # Responsibilities.
        AS = A + S
        first_idx = AS.argmax(axis=1)
        first = AS[idx, first_idx]
        AS[idx, first_idx] = -np.inf
        second = AS.max(axis=1)
        R_new = S - first[:, None]
        R_new[idx, first_idx] = S[idx, first_idx] - second
        R = damping * R + (1.0 - damping) * R_new

        # Availabilities.
        Rp = np.maximum(R, 0.0)
        np.fill_diagonal(Rp, np.diagonal(R))
        A_new = Rp.sum(axis=0)[None, :] - Rp
        diag_a = np.diagonal(A_new).copy()
        A_new = np.minimum(A_new, 0.0)
        np.fill_diagonal(A_new, diag_a)
        A = damping * A + (1.0 - damping) * A_new

        exemplars = np.flatnonzero(np.diagonal(A + R) > 0.0)
        if last_exemplars is not None and np.array_equal(exemplars, last_exemplars):
            stable_for += 1
        else:
            stable_for = 0
        last_exemplars = exemplars
        if exemplars.size > 0 and stable_for >= convergence_iter:
            converged = True
            break

    exemplars = np.flatnonzero(np.diagonal(A + R) > 0.0)
    if exemplars.size == 0:
        exemplars = np.array([int(np.argmax(np.diagonal(A + R)))])
        converged = False

    nearest = exemplars[np.argmax(S[:, exemplars], axis=1)]
    nearest[exemplars] = exemplars
    relabel = {int(e): c for c, e in enumerate(np.unique(nearest))}
    assignment = np.array([relabel[int(e)] for e in nearest], dtype=np.int64)
    return Clustering(assignment=assignment, k=len(relabel), converged=converged)


# ---------------------------------------------------------------------------
# Ensembling


def ensemble(distances: list[DistanceMatrix]) -> DistanceMatrix:
    """Elementwise mean of distance matrices from independent runs."""
    if len(distances) < 2:
        raise ContractError("ensemble needs at least 2 distance matrices")
    shape = distances[0].D.shape
    source = distances[0].source
    for dm in distances[1:]:
        if dm.D.shape != shape:
            raise ContractError(f"shape mismatch in ensemble: {dm.D.shape} vs {shape}")
        if dm.source != source:
            raise ContractError(f"source mismatch in ensemble: {dm.source} vs {source}")
    mean = np.mean([dm.D for dm in distances], axis=0)
    return DistanceMatrix(D=mean, source=source)
