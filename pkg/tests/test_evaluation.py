import math

import numpy as np
import pytest

from src.dataset import Dataset, popularity_buckets
from src.evaluation import (
    MomentAccumulator,
    beta_search,
    evaluate,
    fuse,
    fused_scorer,
    margin_correlation,
    ndcg_at_k,
    recall_at_k,
    sample_margins,
    snr_estimate,
)
from src.matrix import ScoreVector, from_arrays
from src.models import ConfigError, CorrelationUndefined, ShapeError


def _oracle(dataset):
    """Scores 1 on test items and 0 elsewhere"""
    dense = dataset.test.csr.toarray()
    return lambda users: dense[users]


def _random_scorer(dataset, seed=0):
    scores = np.random.default_rng(seed).normal(size=(dataset.n_users, dataset.n_items))
    return lambda users: scores[users]


class TestRankingMetrics:

    def test_recall(self):
        assert recall_at_k([3, 1, 2], {1, 5}, 2) == 0.5
        assert recall_at_k([3, 1, 2], [1, 5], 1) == 0.0

    def test_ndcg(self):
        expected = (1 / math.log2(3)) / (1 + 1 / math.log2(3))
        assert ndcg_at_k([3, 1, 2], [1, 5], 2) == pytest.approx(expected)
        assert ndcg_at_k([1, 5, 2], [1, 5], 2) == pytest.approx(1.0)

    def test_empty_test_set(self):
        assert recall_at_k([1, 2], [], 2) is None
        assert ndcg_at_k([1, 2], [], 2) is None


class TestFusion:

    def test_zero_beta_is_dense(self):
        y_D = ScoreVector(0, np.array([0.3, 0.1, 0.2]), np.array([0]))
        y_S = ScoreVector(0, np.array([5.0, 9.0, 1.0]), np.array([2]))
        fused = fuse(y_D, y_S, 0.0)
        np.testing.assert_array_equal(fused.scores, y_D.scores)
        assert fused.exclude.tolist() == [0, 2]

    def test_weighted_vote(self):
        fused = fuse(ScoreVector(0, np.array([1.0, 0.0])), ScoreVector(0, np.array([0.0, 1.0])), 2.0)
        assert fused.scores.tolist() == [1.0, 2.0]

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            fuse(ScoreVector(0, np.zeros(2)), ScoreVector(0, np.zeros(3)), 1.0)


class TestEvaluate:

    def test_oracle_is_perfect(self, toy_dataset):
        report = evaluate(toy_dataset, _oracle(toy_dataset), None, [1, 3], label="oracle")
        assert report.recall == {1: 1.0, 3: 1.0}
        assert report.ndcg[1] == pytest.approx(1.0)
        assert report.users == 6
        assert report.hits[1] == 6

    def test_known_positives_hidden(self, toy_dataset):
        train = toy_dataset.train.csr.toarray()
        report = evaluate(toy_dataset, lambda users: train[users] * 100.0, None, [2])
        assert report.hits[2] <= report.test_items

    def test_buckets_recombine(self, small_dataset):
        buckets = popularity_buckets(small_dataset.train)
        report = evaluate(small_dataset, _random_scorer(small_dataset), buckets, [5, 10])
        per_bucket = report.per_bucket.values()
        for k in (5, 10):
            assert sum(b.hits[k] for b in per_bucket) == report.hits[k]
            assert sum(b.share_of_recommendations[k] for b in per_bucket) == pytest.approx(1.0)
        assert sum(b.test_items for b in per_bucket) == report.test_items
        assert set(report.per_bucket) == {"unpopular", "normal", "popular"}

    def test_bucket_denominator_is_bucket_only(self, toy_dataset):
        buckets = popularity_buckets(toy_dataset.train)
        report = evaluate(toy_dataset, _oracle(toy_dataset), buckets, [1])
        for bucket in report.per_bucket.values():
            if bucket.users:
                assert bucket.recall[1] == pytest.approx(1.0)


class TestBetaSearch:

    def test_ties_pick_smallest(self, small_dataset):
        scorer = _random_scorer(small_dataset)
        beta, report = beta_search(small_dataset, scorer, scorer, [10.0, 1.0, 3.0], k=5)
        assert beta == 1.0
        assert report.beta == 1.0

    def test_zero_beta_matches_dense(self, small_dataset):
        dense = _random_scorer(small_dataset, 1)
        sparse = _random_scorer(small_dataset, 2)
        fused = evaluate(small_dataset, fused_scorer(dense, sparse, 0.0), None, [5])
        alone = evaluate(small_dataset, dense, None, [5])
        assert fused.recall == alone.recall
        assert fused.ndcg == alone.ndcg

    def test_picks_the_informative_view(self, small_dataset):
        beta, report = beta_search(small_dataset, _random_scorer(small_dataset), _oracle(small_dataset),
                                   [0.0, 100.0], k=5)
        assert beta == 100.0
        assert report.recall[5] == 1.0

    def test_empty_search_set(self, small_dataset):
        scorer = _random_scorer(small_dataset)
        with pytest.raises(ConfigError):
            beta_search(small_dataset, scorer, scorer, [], k=5)


class TestMomentAccumulator:

    def test_streaming_matches_batch(self):
        rng = np.random.default_rng(0)
        x = rng.normal(2.0, 3.0, size=1000)
        y = 0.5 * x + rng.normal(size=1000)
        acc = MomentAccumulator()
        for chunk in np.array_split(np.arange(1000), 7):
            acc.update(x[chunk], y[chunk])
        assert acc.count == 1000
        assert acc.mean_x == pytest.approx(x.mean())
        assert acc.std_x == pytest.approx(x.std())
        assert acc.correlation() == pytest.approx(np.corrcoef(x, y)[0, 1])

    def test_snr(self):
        acc = MomentAccumulator()
        acc.update(np.array([1.0, 3.0]))
        view = acc.snr()
        assert view.snr == pytest.approx(2.0)
        assert not view.zero_variance

    def test_zero_variance(self):
        acc = MomentAccumulator()
        acc.update(np.full(5, 0.7))
        view = acc.snr()
        assert view.snr == math.inf
        assert view.zero_variance

    def test_correlation_needs_three_pairs(self):
        with pytest.raises(CorrelationUndefined):
            margin_correlation([1.0, 2.0], [2.0, 1.0])

    def test_correlation_constant_series(self):
        with pytest.raises(CorrelationUndefined):
            margin_correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_perfect_correlation(self):
        assert margin_correlation([1.0, 2.0, 4.0], [2.0, 4.0, 8.0]) == pytest.approx(1.0)


class TestSnrEstimate:

    def test_negatives_are_unobserved_anywhere(self, small_dataset):
        # Test items score 1, train items 100, everything else 0: a margin of
        # exactly 1 means the negative was never observed.
        scores = np.where(small_dataset.train.csr.toarray() > 0, 100.0, small_dataset.test.csr.toarray())
        total = 0
        for pos_items, margins in sample_margins({"model": lambda users: scores[users]}, small_dataset, 5, seed=0):
            assert margins["model"].shape == (pos_items.size, 5)
            np.testing.assert_array_equal(margins["model"], 1.0)
            total += pos_items.size
        assert total == small_dataset.test.nnz

    def test_oracle_margins_are_positive(self, small_dataset):
        report = snr_estimate(_oracle(small_dataset), small_dataset, None, k_neg=4, seed=0)
        overall = report.views["model"]["overall"]
        assert overall.mean == pytest.approx(1.0)
        assert overall.zero_variance
        assert overall.count == small_dataset.test.nnz * 4

    def test_deterministic_and_buckets(self, small_dataset):
        buckets = popularity_buckets(small_dataset.train)
        scorer = _random_scorer(small_dataset)
        a = snr_estimate({"x": scorer}, small_dataset, buckets, k_neg=3, seed=9)
        b = snr_estimate({"x": scorer}, small_dataset, buckets, k_neg=3, seed=9)
        assert a == b
        counts = sum(v.count for g, v in a.views["x"].items() if g != "overall")
        assert counts == a.views["x"]["overall"].count

    def test_identical_views_correlate(self, small_dataset):
        scorer = _random_scorer(small_dataset)
        report = snr_estimate({"dense": scorer, "sparse": scorer}, small_dataset, None, 4, 0,
                              rho_views=("dense", "sparse"))
        assert report.rho == pytest.approx(1.0)
        assert report.rho_views == ["dense", "sparse"]

    def test_monte_carlo_snr(self):
        # Positives score 2, negatives N(0, 1): margins have mean 2 and std 1
        n_users, n_items = 400, 100
        users = np.arange(n_users)
        dataset = Dataset(train=from_arrays(users, users % n_items, np.ones(n_users), n_users, n_items),
                          test=from_arrays(users, (users + 1) % n_items, np.ones(n_users), n_users, n_items))
        test = dataset.test.csr.toarray()
        noise = np.random.default_rng(3).normal(size=(n_users, n_items))

        def scorer(block):
            return np.where(test[block] > 0, 2.0, noise[block])

        report = snr_estimate(scorer, dataset, None, k_neg=50, seed=1)
        assert report.views["model"]["overall"].snr == pytest.approx(2.0, rel=0.05)

    def test_independent_views_barely_correlate(self):
        # 400 users x 25 negatives = 1e4 paired margins
        n_users, n_items = 400, 100
        users = np.arange(n_users)
        dataset = Dataset(train=from_arrays(users, users % n_items, np.ones(n_users), n_users, n_items),
                          test=from_arrays(users, (users + 1) % n_items, np.ones(n_users), n_users, n_items))
        test = dataset.test.csr.toarray()
        rng = np.random.default_rng(8)
        noise_D, noise_S = rng.normal(size=(n_users, n_items)), rng.normal(size=(n_users, n_items))

        views = {
            "dense": lambda block: np.where(test[block] > 0, 2.0, noise_D[block]),
            "sparse": lambda block: np.where(test[block] > 0, 2.0, noise_S[block]),
        }
        report = snr_estimate(views, dataset, None, k_neg=25, seed=2, rho_views=("dense", "sparse"))
        assert report.views["dense"]["overall"].count == 10_000
        assert abs(report.rho) < 0.05

    def test_independent_series_correlation(self):
        rng = np.random.default_rng(12)
        assert abs(margin_correlation(rng.normal(size=10_000), rng.normal(size=10_000))) < 0.05

    def test_k_neg_minimum(self, small_dataset):
        with pytest.raises(ConfigError):
            snr_estimate(_oracle(small_dataset), small_dataset, None, k_neg=1, seed=0)
