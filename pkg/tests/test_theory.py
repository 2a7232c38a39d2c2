"""Closed-form fusion results and their Monte-Carlo checks."""

import math

import numpy as np
import pytest

from src.models import DegenerateBlend, PreconditionError, SingularCorrelation
from src.theory import (
    MIN_SCALING_TRIALS,
    NoiseModel,
    ViewStats,
    aggregate_variance,
    aligned_snr,
    best_convex_fusion,
    fusion_envelope,
    min_floor_check,
    rho_threshold_check,
    run_theory_lab,
    simulate_alignment_tradeoff,
    simulate_degree_normalization,
    simulate_margin_scaling,
    snr_fusion,
    snr_fusion_grid,
    sparse_variance_check,
)


class TestSnrFusion:

    def test_endpoints_are_exact(self):
        v1, v2 = ViewStats(1.3, 0.7), ViewStats(2.1, 1.9)
        for rho in (-0.5, 0.0, 0.9):
            assert snr_fusion(1.0, v1, v2, rho) == v1.r
            assert snr_fusion(0.0, v1, v2, rho) == v2.r

    def test_independent_equal_views(self):
        v = ViewStats(1.0, 1.0)
        assert snr_fusion(0.5, v, v, 0.0) == pytest.approx(math.sqrt(2.0))

    def test_grid_matches_scalar(self):
        v1, v2 = ViewStats(1.0, 2.0), ViewStats(0.5, 0.5)
        alphas = np.linspace(0.0, 1.0, 11)
        expected = [snr_fusion(float(a), v1, v2, 0.3) for a in alphas]
        np.testing.assert_allclose(snr_fusion_grid(alphas, v1, v2, 0.3), expected, rtol=1e-12)

    def test_decreasing_in_rho(self):
        v1, v2 = ViewStats(1.0, 1.0), ViewStats(2.0, 1.5)
        values = [snr_fusion(0.4, v1, v2, rho) for rho in np.linspace(-0.9, 0.9, 19)]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_preconditions(self):
        v = ViewStats(1.0, 1.0)
        with pytest.raises(PreconditionError):
            snr_fusion(1.5, v, v, 0.0)
        with pytest.raises(PreconditionError):
            snr_fusion(0.5, v, v, 1.5)
        with pytest.raises(PreconditionError):
            ViewStats(1.0, 0.0)

    def test_degenerate_blend(self):
        v = ViewStats(1.0, 1.0)
        with pytest.raises(DegenerateBlend):
            snr_fusion(0.5, v, v, -1.0)


class TestEnvelope:

    def test_symmetric_independent(self):
        assert fusion_envelope(ViewStats(1.7, 1.0), ViewStats(1.7, 1.0), 0.0) == pytest.approx(math.sqrt(2) * 1.7)

    def test_dominates_convex_blends(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            v1 = ViewStats(float(rng.uniform(0.5, 3)), float(rng.uniform(0.5, 2)))
            v2 = ViewStats(float(rng.uniform(0.5, 3)), float(rng.uniform(0.5, 2)))
            rho = float(rng.uniform(-0.9, 0.9))
            _, best = best_convex_fusion(v1, v2, rho)
            assert fusion_envelope(v1, v2, rho) >= best - 1e-9

    def test_singular(self):
        with pytest.raises(SingularCorrelation):
            fusion_envelope(ViewStats(1.0, 1.0), ViewStats(2.0, 1.0), 1.0)


class TestThresholds:

    @pytest.mark.parametrize("r1,r2", [(2.0, 1.0), (1.0, 1.0), (1.0, 3.0), (2.5, 0.5)])
    def test_rho_threshold(self, r1, r2):
        check = rho_threshold_check(ViewStats(r1, 1.0), ViewStats(r2, 1.0))
        assert check.threshold == pytest.approx(min(r1, r2) / max(r1, r2))
        assert check.verified

    def test_threshold_needs_positive_snr(self):
        with pytest.raises(PreconditionError):
            rho_threshold_check(ViewStats(-1.0, 1.0), ViewStats(1.0, 1.0))

    def test_min_floor(self):
        assert min_floor_check(ViewStats(1.0, 1.0), ViewStats(3.0, 2.0),
                               np.linspace(0, 1, 101), np.linspace(0, 0.99, 100))


class TestSimulators:

    def test_margin_scaling_bound(self):
        result = simulate_margin_scaling(NoiseModel(n_interactions=32), gap=1.0, trials=MIN_SCALING_TRIALS, seed=1)
        assert result.passed
        assert result.empirical_snr <= result.bound * 1.05

    def test_margin_scaling_grows_with_interactions(self):
        small = simulate_margin_scaling(NoiseModel(n_interactions=16), 1.0, 10000, seed=1)
        large = simulate_margin_scaling(NoiseModel(n_interactions=64), 1.0, 10000, seed=1)
        assert large.empirical_snr / small.empirical_snr == pytest.approx(2.0, abs=0.3)

    def test_margin_scaling_trial_floor(self):
        with pytest.raises(PreconditionError):
            simulate_margin_scaling(NoiseModel(), 1.0, MIN_SCALING_TRIALS - 1)

    def test_zero_gap(self):
        result = simulate_margin_scaling(NoiseModel(), 0.0, 10000, seed=2)
        assert abs(result.empirical_snr) < 0.1

    def test_degree_normalization(self):
        result = simulate_degree_normalization(NoiseModel(n_interactions=64), (5.0, 20.0, 50.0), 10000, seed=3)
        assert 0.4 <= result.exponent <= 0.6
        assert result.degree_change < 0.1

    def test_aligned_snr(self):
        dense, sparse = ViewStats(1.5, 1.0), ViewStats(2.0, 1.0)
        r_dense, r_sparse = aligned_snr(NoiseModel(n_interactions=16, eta=16), dense, sparse)
        assert r_dense == pytest.approx(math.sqrt(2) * 1.5)
        assert r_sparse == sparse.r
        noisy, _ = aligned_snr(NoiseModel(eps=0.25), dense, sparse)
        assert noisy == pytest.approx(0.75)

    def test_alignment_tradeoff(self):
        dense, sparse = ViewStats(1.5, 1.0), ViewStats(2.0, 1.0)
        identity = simulate_alignment_tradeoff(NoiseModel(), dense, sparse, 0.3, perturbations=0)
        assert identity.best_after == identity.best_before
        gains = simulate_alignment_tradeoff(NoiseModel(eta=8, kappa=4, k_neighbors=8, eps=0.05),
                                            dense, sparse, 0.3, seed=4)
        assert gains.passed

    def test_sparse_variance(self):
        result = sparse_variance_check(trials=10000, seed=5)
        assert result.passed
        rng = np.random.default_rng(6)
        ratio = aggregate_variance(1, 10000, rng) / aggregate_variance(100, 10000, rng)
        assert 80.0 <= ratio <= 120.0

    def test_noise_model_preconditions(self):
        with pytest.raises(PreconditionError):
            NoiseModel(eps=0.5)
        with pytest.raises(PreconditionError):
            NoiseModel(c=0.0)


@pytest.mark.slow
class TestTheoryLab:

    def test_all_checks_pass(self):
        report = run_theory_lab(seed=2024)
        failed = [check.name for check in report.checks if not check.passed]
        assert failed == []
        assert report.passed
        assert len(report.checks) == 10
