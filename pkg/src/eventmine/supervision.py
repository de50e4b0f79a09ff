"""Pairwise supervision for a batch: one-hot label matrix, both-unseen
indicator, and the margin mask that gates the contrastive loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractError, DataError


@dataclass
class SupervisionTensors:
    """O (n x c one-hot, zero rows for unseen), Y = O@O.T | I, U = both-unseen."""

    O: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    n: int


def build_labels(type_ids: np.ndarray, seen_type_count: int) -> SupervisionTensors:
    """Build supervision tensors from per-row type ids (-1 marks unseen).

    Y is 1 for same-seen-type pairs and on the whole diagonal; U is 1 exactly
    when both rows are unseen (diagonal included).
    """
    type_ids = np.asarray(type_ids, dtype=np.int64)
    n = type_ids.shape[0]
    if n < 1:
        raise ContractError("batch must contain at least one row")
    if (type_ids >= seen_type_count).any():
        bad = int(type_ids.max())
        raise DataError(f"type id {bad} out of range for {seen_type_count} seen types")

    O = np.zeros((n, seen_type_count), dtype=np.float64)
    seen = type_ids >= 0
    O[np.flatnonzero(seen), type_ids[seen]] = 1.0
    Y = (O @ O.T).astype(bool) | np.eye(n, dtype=bool)
    unseen = ~seen
    U = unseen[:, None] & unseen[None, :]
    return SupervisionTensors(O=O, Y=Y, U=U, n=n)


def build_mask(
    tensors: SupervisionTensors, logits: np.ndarray, margin: float
) -> np.ndarray:
    """Boolean mask of pairs kept in the loss.

    A pair is dropped when it is a well-separated negative
    (Y=0 and sigmoid(logit) < margin) or when both rows are unseen. The
    diagonal always stays: Y's identity term dominates U there.
    """
    if not 0.0 < margin < 1.0:
        raise ContractError(f"margin must lie in (0, 1), got {margin}")
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (tensors.n, tensors.n):
        raise ContractError(
            f"logits shape {logits.shape} does not match batch size {tensors.n}"
        )
    if not np.isfinite(logits).all():
        raise ContractError("logits contain NaN or Inf")
    separated_negative = ~tensors.Y & (expit(logits) < margin)
    return ~(separated_negative | (tensors.U & ~tensors.Y))
