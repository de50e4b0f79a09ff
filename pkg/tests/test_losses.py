"""Tests for the contrastive, combined, and auxiliary loss terms."""

from __future__ import annotations

import logging

import numpy as np
import pytest

import oracles
from eventmine.clusterer import ClustererParams, backward, forward, init_params
from eventmine.dataio import NameCorpus
from eventmine.errors import ContractError, DegenerateBatchError, NumericsError
from eventmine.losses import (
    auxiliary_loss,
    combined_contrastive,
    contrastive_loss,
)
from eventmine.supervision import build_labels, build_mask


def float64_params(seed: int, d: int) -> ClustererParams:
    rng = np.random.default_rng(seed)
    flat = init_params(seed, d, 0.0).flat.astype(np.float64)
    flat += rng.standard_normal(flat.size) * 0.05
    return ClustererParams(flat=flat, d=d, depth=1, dropout_rate=0.0)


class TestContrastiveLoss:
    def test_perfect_separation_near_zero(self):
        tensors = build_labels(np.array([0, 0, 1]), 2)
        logits = np.where(tensors.Y, 30.0, -30.0)
        mask = np.ones((3, 3), dtype=bool)
        value, _ = contrastive_loss(logits, tensors, mask)
        assert value < 1e-10

    def test_single_entry_ln2(self):
        """BCE of a positive at sigmoid(0) = 0.5 is ln 2."""
        tensors = build_labels(np.array([0, 0]), 1)
        mask = np.zeros((2, 2), dtype=bool)
        mask[0, 1] = True
        value, grad = contrastive_loss(np.zeros((2, 2)), tensors, mask)
        assert value == pytest.approx(np.log(2), abs=1e-12)
        assert grad[0, 1] == pytest.approx(-0.5)

    def test_matches_elementwise_oracle(self):
        """Value agrees with a naive per-entry BCE summation."""
        rng = np.random.default_rng(0)
        for _ in range(25):
            tags = rng.integers(-1, 3, size=6)
            tensors = build_labels(tags, 3)
            logits = rng.standard_normal((6, 6)) * 3
            mask = build_mask(tensors, logits, 0.5)
            value, _ = contrastive_loss(logits, tensors, mask)
            ref = oracles.masked_bce_mean(logits, tensors.Y.astype(float), mask)
            assert value == pytest.approx(ref, abs=1e-10)

    def test_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            tags = rng.integers(-1, 2, size=5)
            tensors = build_labels(tags, 2)
            logits = rng.standard_normal((5, 5))
            mask = build_mask(tensors, logits, 0.5)
            _, grad = contrastive_loss(logits, tensors, mask)
            eps = 1e-6
            for i in range(5):
                for j in range(5):
                    plus, minus = logits.copy(), logits.copy()
                    plus[i, j] += eps
                    minus[i, j] -= eps
                    ref = (
                        contrastive_loss(plus, tensors, mask)[0]
                        - contrastive_loss(minus, tensors, mask)[0]
                    ) / (2 * eps)
                    assert grad[i, j] == pytest.approx(ref, rel=1e-6, abs=1e-9)

    def test_masked_entries_zero_gradient(self):
        """Masked pairs contribute bitwise-zero gradient."""
        rng = np.random.default_rng(2)
        tags = rng.integers(-1, 3, size=8)
        tensors = build_labels(tags, 3)
        logits = rng.standard_normal((8, 8))
        mask = build_mask(tensors, logits, 0.5)
        _, grad = contrastive_loss(logits, tensors, mask)
        assert (grad[~mask] == 0.0).all()

    def test_all_masked_degenerate(self):
        tensors = build_labels(np.array([0, 1]), 2)
        with pytest.raises(DegenerateBatchError):
            contrastive_loss(np.zeros((2, 2)), tensors, np.zeros((2, 2), dtype=bool))

    def test_shape_mismatch(self):
        tensors = build_labels(np.array([0, 1]), 2)
        with pytest.raises(ContractError):
            contrastive_loss(np.zeros((3, 3)), tensors, np.ones((3, 3), dtype=bool))


class TestCombinedContrastive:
    def test_identical_augmentation_quadruples(self):
        """With X' = X and dropout off, all four terms coincide."""
        d = 6
        params = float64_params(3, d)
        rng = np.random.default_rng(4)
        X = rng.standard_normal((5, d))
        tags = np.array([0, 0, 1, -1, -1])
        tensors = build_labels(tags, 2)
        fwd = forward(params, X)
        fwd_aug = forward(params, X.copy())
        comb = combined_contrastive(fwd, fwd_aug, tensors, 0.5)
        assert len(comb.term_values) == 4
        assert comb.term_values == pytest.approx([comb.term_values[0]] * 4)
        assert comb.l_c == pytest.approx(4 * comb.term_values[0])

    def test_no_augmentation_single_term(self, caplog):
        d = 4
        params = float64_params(5, d)
        X = np.random.default_rng(6).standard_normal((4, d))
        tensors = build_labels(np.array([0, 1, -1, -1]), 2)
        fwd = forward(params, X)
        with caplog.at_level(logging.WARNING, logger="eventmine.losses"):
            comb = combined_contrastive(fwd, None, tensors, 0.5)
        assert len(comb.term_values) == 1
        assert comb.grad_q_aug is None and comb.grad_k_aug is None
        mask = build_mask(tensors, fwd.logits, 0.5)
        ref, _ = contrastive_loss(fwd.logits, tensors, mask)
        assert comb.l_c == pytest.approx(ref)

    def test_term_decomposition(self):
        """Each of the four terms equals contrastive_loss on its own
        logits with its own mask."""
        d = 7
        params = float64_params(7, d)
        rng = np.random.default_rng(8)
        X = rng.standard_normal((8, d))
        X_aug = X + rng.standard_normal((8, d)) * 0.1
        tags = rng.integers(-1, 3, size=8)
        tensors = build_labels(tags, 3)
        fwd = forward(params, X)
        fwd_aug = forward(params, X_aug)
        comb = combined_contrastive(fwd, fwd_aug, tensors, 0.5)

        scale = 1.0 / np.sqrt(d)
        expected = []
        for q, k in [
            (fwd.Q, fwd.K),
            (fwd.Q, fwd_aug.K),
            (fwd_aug.Q, fwd.K),
            (fwd_aug.Q, fwd_aug.K),
        ]:
            logits = (q @ k.T) * scale
            mask = build_mask(tensors, logits, 0.5)
            expected.append(contrastive_loss(logits, tensors, mask)[0])
        assert comb.term_values == pytest.approx(expected, abs=1e-12)

    def test_full_gradient_against_finite_difference(self):
        """End-to-end FD check of l_c through both forwards, including the
        cross-pair gradient routing."""
        d = 5
        rng = np.random.default_rng(9)
        params = float64_params(10, d)
        X = rng.standard_normal((5, d))
        X_aug = X + rng.standard_normal((5, d)) * 0.1
        tags = np.array([0, 1, -1, 0, -1])
        tensors = build_labels(tags, 2)

        def l_c_at(theta):
            p = ClustererParams(flat=theta, d=d, depth=1, dropout_rate=0.0)
            f = forward(p, X)
            f_aug = forward(p, X_aug)
            return combined_contrastive(f, f_aug, tensors, 0.5).l_c

        fwd = forward(params, X)
        fwd_aug = forward(params, X_aug)
        comb = combined_contrastive(fwd, fwd_aug, tensors, 0.5)
        g_primary, _ = backward(params, fwd, grad_q=comb.grad_q, grad_k=comb.grad_k)
        g_aug, _ = backward(params, fwd_aug, grad_q=comb.grad_q_aug, grad_k=comb.grad_k_aug)
        total = g_primary + g_aug

        idx = rng.choice(params.n_params, size=50, replace=False)
        fd = oracles.fd_gradient(l_c_at, params.flat.astype(np.float64), idx)
        for i, ref in fd.items():
            err = abs(total[i] - ref) / max(abs(ref), abs(total[i]), 1e-7)
            assert err < 1e-4


class TestAuxiliaryLoss:
    def corpus(self, d=4):
        rng = np.random.default_rng(11)
        emb = rng.standard_normal((3, d)).astype(np.float32)
        return NameCorpus(labels=["alpha", "beta", "gamma"], embeddings=emb)

    def test_perfect_alignment_zero(self):
        corpus = self.corpus()
        tags = np.array([0, 1, -1])
        aux = np.vstack(
            [corpus.embeddings[0], corpus.embeddings[1], np.ones(4)]
        ).astype(np.float64)
        value, grad = auxiliary_loss(aux, corpus, tags, ["alpha", "beta"])
        assert value == pytest.approx(0.0, abs=1e-12)
        assert (grad[2] == 0).all()

    def test_antipodal_is_two(self):
        corpus = self.corpus()
        tags = np.array([0])
        with pytest.raises(ContractError):
            auxiliary_loss(np.zeros((2, 4)), corpus, tags, ["alpha"])
        value, _ = auxiliary_loss(
            -corpus.embeddings[:1].astype(np.float64), corpus, tags, ["alpha"]
        )
        assert value == pytest.approx(2.0, abs=1e-6)

    def test_scale_invariance_and_orthogonal_gradient(self):
        """Positive rescaling leaves the loss unchanged; the gradient has
        no component along the row itself."""
        corpus = self.corpus()
        rng = np.random.default_rng(12)
        aux = rng.standard_normal((3, 4))
        tags = np.array([0, 2, 1])
        names = ["alpha", "beta", "gamma"]
        v1, g1 = auxiliary_loss(aux, corpus, tags, names)
        v2, _ = auxiliary_loss(aux * 3.7, corpus, tags, names)
        assert v1 == pytest.approx(v2, rel=1e-12)
        for i in range(3):
            assert float(g1[i] @ aux[i]) == pytest.approx(0.0, abs=1e-12)

    def test_gradient_matches_finite_difference(self):
        corpus = self.corpus()
        rng = np.random.default_rng(13)
        aux = rng.standard_normal((4, 4))
        tags = np.array([0, -1, 1, 2])
        names = ["alpha", "beta", "gamma"]
        _, grad = auxiliary_loss(aux, corpus, tags, names)
        eps = 1e-6
        for i in range(4):
            for j in range(4):
                plus, minus = aux.copy(), aux.copy()
                plus[i, j] += eps
                minus[i, j] -= eps
                ref = (
                    auxiliary_loss(plus, corpus, tags, names)[0]
                    - auxiliary_loss(minus, corpus, tags, names)[0]
                ) / (2 * eps)
                assert grad[i, j] == pytest.approx(ref, rel=1e-5, abs=1e-9)

    def test_unseen_rows_zero_contribution(self):
        corpus = self.corpus()
        rng = np.random.default_rng(14)
        aux = rng.standard_normal((5, 4))
        tags = np.array([-1, 0, -1, 1, -1])
        value, grad = auxiliary_loss(aux, corpus, tags, ["alpha", "beta"])
        assert (grad[[0, 2, 4]] == 0).all()
        seen_only, _ = auxiliary_loss(aux[[1, 3]], corpus, tags[[1, 3]], ["alpha", "beta"])
        assert value == pytest.approx(seen_only)

    def test_all_unseen_returns_zero(self):
        corpus = self.corpus()
        value, grad = auxiliary_loss(np.ones((2, 4)), corpus, np.array([-1, -1]), [])
        assert value == 0.0
        assert (grad == 0).all()

    def test_zero_norm_seen_row_rejected(self):
        corpus = self.corpus()
        aux = np.zeros((1, 4))
        with pytest.raises(NumericsError):
            auxiliary_loss(aux, corpus, np.array([0]), ["alpha"])
