"""Loss terms over batch-attention outputs.

The contrastive term is binary cross-entropy between sigmoid(logits) and
the pairwise label matrix, averaged over margin-unmasked entries and
computed in log-space straight from the logits. The combined term sums it
over the four (Q, K) pairings of a batch and its augmented copy, each pair
re-masked from its own logits. The auxiliary term regresses clustered
features onto type-name embeddings with cosine distance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .clusterer import BatchForward
from .dataio import NameCorpus
from .errors import ContractError, DegenerateBatchError, NumericsError
from .supervision import SupervisionTensors, build_mask

logger = logging.getLogger(__name__)
_warned_no_augmentation = False


def contrastive_loss(
    logits: np.ndarray, tensors: SupervisionTensors, mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean masked BCE over pair logits; returns (value, grad wrt logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    n = tensors.n
    if logits.shape != (n, n) or mask.shape != (n, n):
        raise ContractError("logits/mask shape does not match supervision tensors")
    active = int(mask.sum())
    if active == 0:
        raise DegenerateBatchError("every pair in the batch is masked")
    y = tensors.Y.astype(np.float64)
    # softplus(l) - y*l == BCE(sigmoid(l), y), stable for large |l|.
    elementwise = np.logaddexp(0.0, logits) - y * logits
    value = float(elementwise[mask].sum() / active)
    grad = np.where(mask, expit(logits) - y, 0.0) / active
    return value, grad


@dataclass
class CombinedLoss:
    """Four-term contrastive breakdown with gradients routed per forward."""

    term_values: list[float]
    l_c: float
    active_pair_count: int
    grad_q: np.ndarray
    grad_k: np.ndarray
    grad_q_aug: np.ndarray | None
    grad_k_aug: np.ndarray | None


def combined_contrastive(
    fwd: BatchForward,
    fwd_aug: BatchForward | None,
    tensors: SupervisionTensors,
    margin: float,
) -> CombinedLoss:
    """Sum the masked contrastive loss over {Q, Q'} x {K, K'}.

    Without an augmented forward this degrades to the single (Q, K) term.
    Each pairing gets its own margin mask computed from its own logits.
    """
    global _warned_no_augmentation
    scale = 1.0 / np.sqrt(fwd.Q.shape[1])

    if fwd_aug is None:
        if not _warned_no_augmentation:
            logger.warning("no augmented batch supplied; using the single (Q, K) loss term")
            _warned_no_augmentation = True
        pairs = [(fwd.Q, fwd.K, "q", "k")]
    else:
        pairs = [
            (fwd.Q, fwd.K, "q", "k"),
            (fwd.Q, fwd_aug.K, "q", "k_aug"),
            (fwd_aug.Q, fwd.K, "q_aug", "k"),
            (fwd_aug.Q, fwd_aug.K, "q_aug", "k_aug"),
        ]

    grads = {
        "q": np.zeros_like(fwd.Q),
        "k": np.zeros_like(fwd.K),
        "q_aug": None if fwd_aug is None else np.zeros_like(fwd_aug.Q),
        "k_aug": None if fwd_aug is None else np.zeros_like(fwd_aug.K),
    }
    term_values: list[float] = []
    active_total = 0
    for q_mat, k_mat, q_slot, k_slot in pairs:
        logits = (q_mat @ k_mat.T) * scale
        mask = build_mask(tensors, logits, margin)
        value, grad_logits = contrastive_loss(logits, tensors, mask)
        term_values.append(value)
        active_total += int(mask.sum())
        grads[q_slot] += (grad_logits @ k_mat) * scale
        grads[k_slot] += (grad_logits.T @ q_mat) * scale

    return CombinedLoss(
        term_values=term_values,
        l_c=float(sum(term_values)),
        active_pair_count=active_total,
        grad_q=grads["q"],
        grad_k=grads["k"],
        grad_q_aug=grads["q_aug"],
        grad_k_aug=grads["k_aug"],
    )


def auxiliary_loss(
    aux_out: np.ndarray,
    name_corpus: NameCorpus,
    type_ids: np.ndarray,
    seen_type_names: list[str],
) -> tuple[float, np.ndarray]:
    """Mean cosine distance between seen rows' aux output and their type
    name embedding; unseen rows contribute zero loss and zero gradient."""
    aux_out = np.asarray(aux_out, dtype=np.float64)
    type_ids = np.asarray(type_ids, dtype=np.int64)
    n = aux_out.shape[0]
    if type_ids.shape != (n,):
        raise ContractError("type_ids length does not match aux_out rows")

    grad = np.zeros_like(aux_out)
    seen_rows = np.flatnonzero(type_ids >= 0)
    if seen_rows.size == 0:
        return 0.0, grad

    total = 0.0
    for i in seen_rows:
        target = name_corpus.embeddings[
            name_corpus.index_of(seen_type_names[type_ids[i]])
        ].astype(np.float64)
        a = aux_out[i]
        na = float(np.linalg.norm(a))
        nb = float(np.linalg.norm(target))
        if na == 0.0 or nb == 0.0:
            raise NumericsError(f"zero-norm vector in cosine loss at row {i}")
        cos = float(a @ target) / (na * nb)
        total += 1.0 - cos
        grad[i] = -(target / (na * nb) - cos * a / (na * na))
    grad /= seen_rows.size
    return total / seen_rows.size, grad
