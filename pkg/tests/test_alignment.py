import logging

import numpy as np
import pytest

from src.alignment import (
    augment_dense_input,
    choose_k_for_ratio,
    d2s_augment,
    pseudo_ratio,
    pseudo_stats,
    realign_sparse,
    s2d_pseudo_positives,
    topk_candidates,
)
from src.matrix import Provenance, from_arrays
from src.models import AlignConfig, ConfigError, DisjointnessError, ShapeError, SlimConfig
from src.slim import fit_slim
from tests.conftest import matrix

# 3 users x 4 items; observed: (0,0), (1,1), (2,3)
SCORES = np.array([
    [9.0, 1.0, 5.0, 2.0],
    [4.0, 9.0, 3.0, 3.0],
    [0.5, 6.0, 0.2, 9.0],
])


@pytest.fixture
def R():
    return matrix([(0, 0), (1, 1), (2, 3)], 3, 4)


def _pairs(M):
    users, items, _, _ = M.to_records()
    return set(zip(users.tolist(), items.tolist()))


class TestTopKCandidates:

    def test_user_side(self, R):
        candidates = topk_candidates(SCORES, R, k_user=1, k_item=0)
        users, items = candidates.select(1, 0)
        assert set(zip(users.tolist(), items.tolist())) == {(0, 2), (1, 0), (2, 1)}

    def test_item_side(self, R):
        candidates = topk_candidates(SCORES, R, k_user=0, k_item=1)
        users, items = candidates.select(0, 1)
        # item 0: user 1 (4.0); item 1: user 2 (6.0); item 2: user 0 (5.0); item 3: user 1 (3.0)
        assert set(zip(users.tolist(), items.tolist())) == {(1, 0), (2, 1), (0, 2), (1, 3)}

    def test_union_of_both_sides(self, R):
        candidates = topk_candidates(SCORES, R, k_user=1, k_item=1)
        users, items = candidates.select(1, 1)
        assert set(zip(users.tolist(), items.tolist())) == {(0, 2), (1, 0), (2, 1), (1, 3)}

    def test_ties_prefer_lower_index(self, R):
        # user 1 ranks items 2 and 3 equally after item 0
        candidates = topk_candidates(SCORES, R, k_user=2, k_item=0)
        users, items = candidates.select(2, 0)
        assert (1, 2) in set(zip(users.tolist(), items.tolist()))
        assert (1, 3) not in set(zip(users.tolist(), items.tolist()))

    def test_observed_pairs_never_nominated(self, R):
        candidates = topk_candidates(SCORES, R, k_user=4, k_item=3)
        assert not R.contains(candidates.users, candidates.items).any()

    def test_smaller_k_is_prefix(self, R):
        candidates = topk_candidates(SCORES, R, k_user=3, k_item=3)
        small = set(zip(*[a.tolist() for a in candidates.select(1, 1)]))
        large = set(zip(*[a.tolist() for a in candidates.select(2, 2)]))
        assert small <= large
        assert candidates.count(1, 1) == len(small)
        direct = topk_candidates(SCORES, R, k_user=1, k_item=1)
        assert small == set(zip(*[a.tolist() for a in direct.select(1, 1)]))

    def test_callable_scorer_and_threads(self, small_dataset):
        R = small_dataset.train
        rng = np.random.default_rng(0)
        scores = rng.normal(size=(R.n_users, R.n_items))
        one = topk_candidates(scores, R, 3, 2, threads=1)
        many = topk_candidates(lambda users: scores[users], R, 3, 2, threads=4)
        np.testing.assert_array_equal(one.users, many.users)
        np.testing.assert_array_equal(one.items, many.items)

    def test_scorer_shape_checked(self, R):
        with pytest.raises(ShapeError):
            topk_candidates(lambda users: np.zeros((len(users), 2)), R, 1, 1)

    def test_negative_k(self, R):
        with pytest.raises(ConfigError):
            topk_candidates(SCORES, R, -1, 0)


class TestSparseToDense:

    def test_pseudo_positives(self, R):
        R_star = s2d_pseudo_positives(SCORES, R, AlignConfig(k_user=1, k_item=0))
        assert _pairs(R_star) == {(0, 2), (1, 0), (2, 1)}
        assert R_star.count(Provenance.PSEUDO_S2D) == 3
        assert (R_star.weights == 1.0).all()

    def test_k_zero_is_empty(self, R):
        assert s2d_pseudo_positives(SCORES, R, AlignConfig(k=0)).nnz == 0

    @pytest.mark.parametrize("lambda_conf", [0.0, 0.3, 1.0])
    def test_confidence_weight(self, R, lambda_conf):
        R_star = s2d_pseudo_positives(SCORES, R, AlignConfig(k_user=1, k_item=0))
        R_hat = augment_dense_input(R, R_star, lambda_conf)
        assert R_hat.nnz == R.nnz + R_star.nnz
        pseudo = R_hat.select(Provenance.PSEUDO_S2D)
        assert (pseudo.weights == lambda_conf).all()
        assert (R_hat.select(Provenance.OBSERVED).weights == 1.0).all()

    def test_lambda_out_of_range(self, R):
        with pytest.raises(ConfigError):
            augment_dense_input(R, matrix([], 3, 4), 1.5)

    def test_overlap_rejected(self, R):
        overlapping = from_arrays([0], [0], [1.0], 3, 4, np.array([Provenance.PSEUDO_S2D], dtype=np.int8))
        with pytest.raises(DisjointnessError):
            augment_dense_input(R, overlapping, 0.5)

    def test_shape_mismatch(self, R):
        with pytest.raises(ShapeError):
            augment_dense_input(R, matrix([], 3, 5), 0.5)


class TestDenseToSparse:

    def test_k_zero_is_identity(self, R):
        assert d2s_augment(SCORES, R, 0) is R

    def test_union_with_observed(self, R):
        R_prime = d2s_augment(SCORES, R, 1)
        assert _pairs(R) <= _pairs(R_prime)
        assert _pairs(R_prime) - _pairs(R) == {(0, 2), (1, 0), (2, 1), (1, 3)}
        assert (R_prime.weights == 1.0).all()
        assert R_prime.count(Provenance.OBSERVED) == R.nnz
        assert R_prime.count(Provenance.PSEUDO_D2S) == 4

    def test_repeated_union_only_adds_new_pairs(self, R):
        once = d2s_augment(SCORES, R, 1)
        twice = d2s_augment(SCORES, once, 1)
        assert _pairs(once) <= _pairs(twice)
        assert twice.count(Provenance.OBSERVED) == R.nnz

    def test_realign_refits_on_augmented(self, small_dataset):
        R = small_dataset.train
        scores = np.random.default_rng(1).normal(size=(R.n_users, R.n_items))
        R_prime = d2s_augment(scores, R, 2)
        cfg = SlimConfig(l1=1e-3, l2=1e-2)
        S_prime, scorer = realign_sparse(R_prime, cfg)
        np.testing.assert_array_equal(S_prime.to_dense(), fit_slim(R_prime, cfg).to_dense())
        expected = (R_prime.csr[[0, 3]] @ S_prime.csr).toarray()
        np.testing.assert_allclose(scorer(np.array([0, 3])), expected)


class TestPseudoRatio:

    def test_ratio(self):
        assert pseudo_ratio(80, 20) == 0.2
        assert pseudo_ratio(0, 0) == 0.0

    def test_stats(self, R):
        R_hat = augment_dense_input(R, s2d_pseudo_positives(SCORES, R, AlignConfig(k_user=1, k_item=0)), 0.5)
        stats = pseudo_stats(R_hat)
        assert stats == {"entries": 6, "observed": 3, "pseudo_s2d": 3, "pseudo_d2s": 0, "pseudo_fraction": 0.5}

    def test_choose_k_closest(self, R):
        # K=0 -> 0.0, K=1 -> 4/7, K=2 -> larger
        k, ratio = choose_k_for_ratio(SCORES, R, [0, 1, 2], target=0.5)
        assert k == 1
        assert ratio == pytest.approx(4 / 7)

    def test_choose_k_tie_prefers_smaller(self, R):
        k, _ = choose_k_for_ratio(SCORES, R, [1, 1, 0], target=2 / 7)
        assert k == 0

    def test_choose_k_warns_when_far(self, R, caplog):
        with caplog.at_level(logging.WARNING):
            choose_k_for_ratio(SCORES, R, [0], target=0.3)
        assert "within" in caplog.text

    def test_choose_k_empty(self, R):
        with pytest.raises(ConfigError):
            choose_k_for_ratio(SCORES, R, [], target=0.3)
