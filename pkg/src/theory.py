"""
Closed-form fusion formulas and Monte-Carlo checks of the dual-view SNR
results.

Margins are modelled as Gaussian: each view k contributes a margin with mean
mu_k and standard deviation sigma_k, and the two views are correlated with
coefficient rho. All simulators are deterministic given their seed.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .models import CheckResult, DegenerateBlend, PreconditionError, SingularCorrelation, TheoryReport

logger = logging.getLogger(__name__)

ALPHA_RESOLUTION = 1e-4
RHO_OFFSETS = (0.05, 0.1, 0.2, 0.3)
MIN_SCALING_TRIALS = 10_000


@dataclass(frozen=True)
class ViewStats:
    """Margin mean and standard deviation of one view"""
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise PreconditionError(f"sigma must be positive, got {self.sigma}")

    @property
    def r(self) -> float:
        return self.mu / self.sigma

    @classmethod
    def from_snr(cls, r: float, sigma: float = 1.0) -> "ViewStats":
        return cls(r * sigma, sigma)


@dataclass(frozen=True)
class NoiseModel:
    """
    Estimation-noise parameters of one item.

    c: efficiency constant of the embedding covariance (c / N_i) I
    n_interactions: N_i, interactions of the item
    k_neighbors: K_i, effective neighbors in the item-item model
    eta: pseudo-interactions added to the item by alignment
    kappa: extra neighbors inferred by alignment
    eps: label-noise rate of the pseudo-interactions
    """
    c: float = 1.0
    n_interactions: int = 16
    k_neighbors: int = 16
    eta: int = 0
    kappa: int = 0
    eps: float = 0.0

    def __post_init__(self):
        if not self.c > 0:
            raise PreconditionError("c must be positive")
        if min(self.n_interactions, self.k_neighbors, self.eta, self.kappa) < 0:
            raise PreconditionError("Counts must be non-negative")
        if not 0.0 <= self.eps < 0.5:
            raise PreconditionError("eps must lie in [0, 0.5)")


# =============================================================================
# Closed forms
# =============================================================================

def snr_fusion(alpha: float, v1: ViewStats, v2: ViewStats, rho: float) -> float:
    """
    SNR of the convex blend alpha * view1 + (1 - alpha) * view2.

    Raises:
        PreconditionError: If alpha or rho is out of range
        DegenerateBlend: If the blended variance is zero
    """
    if not 0.0 <= alpha <= 1.0:
        raise PreconditionError(f"alpha must lie in [0, 1], got {alpha}")
    if not -1.0 <= rho <= 1.0:
        raise PreconditionError(f"rho must lie in [-1, 1], got {rho}")
    if alpha == 1.0:
        return v1.r
    if alpha == 0.0:
        return v2.r
    beta = 1.0 - alpha
    variance = (alpha * v1.sigma) ** 2 + (beta * v2.sigma) ** 2 + 2 * alpha * beta * rho * v1.sigma * v2.sigma
    if variance <= 0:
        raise DegenerateBlend(f"Blend at alpha={alpha}, rho={rho} has zero variance")
    return (alpha * v1.mu + beta * v2.mu) / math.sqrt(variance)


def snr_fusion_grid(alphas: np.ndarray, v1: ViewStats, v2: ViewStats, rho: float) -> np.ndarray:
    """Vectorized snr_fusion over an alpha grid; endpoints stay exact"""
    alphas = np.asarray(alphas, dtype=np.float64)
    beta = 1.0 - alphas
    variance = (alphas * v1.sigma) ** 2 + (beta * v2.sigma) ** 2 + 2 * alphas * beta * rho * v1.sigma * v2.sigma
    if (variance <= 0).any():
        raise DegenerateBlend(f"Blend has zero variance at rho={rho}")
    values = (alphas * v1.mu + beta * v2.mu) / np.sqrt(variance)
    values[alphas == 1.0] = v1.r
    values[alphas == 0.0] = v2.r
    return values


def _envelope(r1: float, r2: float, rho: float) -> float:
    if abs(rho) >= 1.0:
        raise SingularCorrelation(f"Fusion envelope undefined at |rho| = {abs(rho)}")
    return math.sqrt((r1 * r1 + r2 * r2 - 2 * rho * r1 * r2) / (1 - rho * rho))


def fusion_envelope(v1: ViewStats, v2: ViewStats, rho: float) -> float:
    """
    Best SNR over all linear blends, sqrt(m^T Sigma^-1 m) in SNR units.

    Raises:
        SingularCorrelation: If |rho| = 1
    """
    return _envelope(v1.r, v2.r, rho)


def best_convex_fusion(v1: ViewStats, v2: ViewStats, rho: float,
                       resolution: float = ALPHA_RESOLUTION, interior: bool = False) -> Tuple[float, float]:
    """
    Grid search over alpha for the largest blended SNR.

    Returns:
        (alpha, snr) at the best grid point
    """
    steps = int(round(1.0 / resolution))
    alphas = np.linspace(0.0, 1.0, steps + 1)
    if interior:
        alphas = alphas[1:-1]
    values = snr_fusion_grid(alphas, v1, v2, rho)
    best = int(np.argmax(values))
    return float(alphas[best]), float(values[best])


@dataclass
class ThresholdCheck:
    """Correlation threshold below which an interior blend beats the stronger view"""
    threshold: float
    verified: bool
    outcomes: Dict[float, bool] = field(default_factory=dict)


def rho_threshold_check(v1: ViewStats, v2: ViewStats, resolution: float = ALPHA_RESOLUTION) -> ThresholdCheck:
    """
    threshold = r_min / r_max. A blend with 0 < alpha < 1 strictly beats
    max(r1, r2) exactly when rho < threshold; this is checked on a rho grid
    straddling the threshold.

    Raises:
        PreconditionError: If either SNR is not positive
    """
    if v1.r <= 0 or v2.r <= 0:
        raise PreconditionError("Both views need a positive SNR")
    r_max, r_min = max(v1.r, v2.r), min(v1.r, v2.r)
    threshold = r_min / r_max

    rhos = sorted({
        float(np.clip(threshold + sign * offset, 0.0, 0.99))
        for offset in RHO_OFFSETS for sign in (-1, 1)
    })
    outcomes = {}
    verified = True
    for rho in rhos:
        if abs(rho - threshold) < 1e-12:
            continue
        _, best = best_convex_fusion(v1, v2, rho, resolution, interior=True)
        improves = best > r_max + 1e-9
        outcomes[rho] = improves
        if improves != (rho < threshold):
            verified = False
    return ThresholdCheck(threshold, verified, outcomes)


def min_floor_check(v1: ViewStats, v2: ViewStats, alphas: Sequence[float], rhos: Sequence[float]) -> bool:
    """Convex blends never fall below the weaker view when both means are positive"""
    if v1.mu <= 0 or v2.mu <= 0:
        raise PreconditionError("Both views need a positive mean margin")
    floor = min(v1.r, v2.r)
    for rho in rhos:
        if (snr_fusion_grid(np.asarray(alphas), v1, v2, rho) < floor - 1e-12).any():
            return False
    return True


def _loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(x, dtype=np.float64)), np.log(np.asarray(y, dtype=np.float64)), 1)[0])


def _empirical_snr(margins: np.ndarray) -> float:
    std = float(margins.std())
    return float(margins.mean()) / std if std > 0 else math.inf


# =============================================================================
# Simulators
# =============================================================================

@dataclass
class MarginScalingResult:
    """Empirical margin SNR of an item against the upper bound (gap / sqrt(c)) sqrt(N_i)"""
    empirical_snr: float
    bound: float
    mean: float
    std: float
    passed: bool


def simulate_margin_scaling(noise: NoiseModel, gap: float, trials: int, seed: int = 0, dim: int = 8,
                            user_norm: float = 1.0, alignment: float = 0.8,
                            n_negative: Optional[int] = None) -> MarginScalingResult:
    """
    Margins e_u^T[(e_i* - e_j*) + (eps_i - eps_j)] with eps ~ N(0, (c / N) I).

    The negative item is estimated from n_negative interactions (default
    10^8), so its noise is negligible and the bound depends on N_i only.
    `user_norm` is the norm of e_u and `alignment` the cosine between e_u and
    the true embedding gap.

    Raises:
        PreconditionError: If trials < MIN_SCALING_TRIALS
    """
    if trials < MIN_SCALING_TRIALS:
        raise PreconditionError(f"Margin scaling needs at least {MIN_SCALING_TRIALS} trials, got {trials}")
    rng = np.random.default_rng(seed)
    direction = np.zeros(dim)
    direction[0] = 1.0
    e_u = np.zeros(dim)
    e_u[0] = alignment
    e_u[1] = math.sqrt(max(0.0, 1.0 - alignment ** 2))
    e_u *= user_norm

    n_j = n_negative if n_negative is not None else 10 ** 8
    eps_i = rng.normal(0.0, math.sqrt(noise.c / noise.n_interactions), size=(trials, dim))
    eps_j = rng.normal(0.0, math.sqrt(noise.c / n_j), size=(trials, dim))
    margins = (gap * direction + eps_i - eps_j) @ e_u

    empirical = _empirical_snr(margins)
    bound = gap / math.sqrt(noise.c) * math.sqrt(noise.n_interactions)
    passed = empirical <= bound * (1 + 3 / math.sqrt(trials))
    return MarginScalingResult(empirical, bound, float(margins.mean()), float(margins.std()), passed)


@dataclass
class DegreeNormalizationResult:
    """Scaling of the degree-normalized margin SNR in N_i"""
    snr_by_n: Dict[int, float]
    exponent: float
    degree_change: float
    passed: bool


def _normalized_margin_snr(noise: NoiseModel, n_i: int, degrees: Tuple[float, float, float],
                           trials: int, seed: int, dim: int) -> float:
    d_u, d_i, d_j = degrees
    rng = np.random.default_rng(seed)
    e_u = np.zeros(dim)
    e_u[0] = 1.0
    target = np.zeros(dim)
    target[0] = 1.0
    eps_i = rng.normal(0.0, math.sqrt(noise.c / n_i), size=(trials, dim))
    eps_j = rng.normal(0.0, math.sqrt(noise.c / 10 ** 8), size=(trials, dim))
    z_i = (target + eps_i) @ e_u / math.sqrt(d_u * d_i)
    z_j = eps_j @ e_u / math.sqrt(d_u * d_j)
    return _empirical_snr(z_i - z_j)


def simulate_degree_normalization(noise: NoiseModel, degrees: Tuple[float, float, float], trials: int, seed: int = 0,
                                  n_grid: Sequence[int] = (16, 64, 256, 1024), dim: int = 8) -> DegreeNormalizationResult:
    """
    Repeat the margin simulation with scores normalized by 1 / sqrt(d_u d_i).
    The SNR still grows like sqrt(N_i) and does not depend on d_i.
    """
    snr_by_n = {int(n): _normalized_margin_snr(noise, int(n), degrees, trials, seed, dim) for n in n_grid}
    exponent = _loglog_slope(list(snr_by_n), list(snr_by_n.values()))

    d_u, d_i, d_j = degrees
    base = _normalized_margin_snr(noise, noise.n_interactions, degrees, trials, seed, dim)
    scaled = _normalized_margin_snr(noise, noise.n_interactions, (d_u, 10 * d_i, d_j), trials, seed, dim)
    change = abs(scaled - base) / abs(base) if base else math.inf

    passed = 0.4 <= exponent <= 0.6 and change < 0.1
    return DegreeNormalizationResult(snr_by_n, exponent, change, passed)


@dataclass
class AlignmentTradeoffResult:
    """Per-view SNR gains from alignment and their effect on fused SNR"""
    r_dense: float
    r_sparse: float
    r_dense_aligned: float
    r_sparse_aligned: float
    best_before: float
    best_after: float
    monotone: Optional[bool]
    perturbations: int
    perturbations_improved: int

    @property
    def passed(self) -> bool:
        return self.monotone is not False and self.perturbations_improved == self.perturbations


def aligned_snr(noise: NoiseModel, dense: ViewStats, sparse: ViewStats) -> Tuple[float, float]:
    """
    (r_D', r_S') = ((1 - 2 eps) r_D sqrt(1 + eta / N), r_S sqrt(1 + kappa / K))
    """
    n = max(noise.n_interactions, 1)
    k = max(noise.k_neighbors, 1)
    r_dense = (1 - 2 * noise.eps) * dense.r * math.sqrt(1 + noise.eta / n)
    r_sparse = sparse.r * math.sqrt(1 + noise.kappa / k)
    return r_dense, r_sparse


def _tradeoff_perturbation(rng: np.random.Generator) -> Tuple[float, float, float, float, float, float]:
    while True:
        r1, r2 = rng.uniform(0.5, 3.0, size=2)
        rho = rng.uniform(0.0, 0.8)
        a, b = r1 - rho * r2, r2 - rho * r1
        if a > 0 and b > 0:
            break
    d_rho = rng.uniform(0.0, 1e-5)
    h = (a * b * d_rho / (1 - rho * rho) + 1e-4) / (a + b)
    v = rng.uniform(-1e-5, 1e-5)
    return r1, r2, rho, h + v * b, h - v * a, d_rho


def simulate_alignment_tradeoff(noise: NoiseModel, dense: ViewStats, sparse: ViewStats, rho: float,
                                seed: int = 0, perturbations: int = 100) -> AlignmentTradeoffResult:
    """
    Apply the alignment gains to both views and compare the best convex
    fusion before and after at fixed rho. Then sample perturbations
    (d_r1, d_r2, d_rho > 0) satisfying

        (r1 - rho r2) d_r1 + (r2 - rho r1) d_r2 > (r1 - rho r2)(r2 - rho r1) d_rho / (1 - rho^2)

    and confirm the fusion envelope grows for each.
    """
    r_dense, r_sparse = aligned_snr(noise, dense, sparse)
    dense_after = ViewStats.from_snr(r_dense, dense.sigma)
    sparse_after = ViewStats.from_snr(r_sparse, sparse.sigma)
    _, before = best_convex_fusion(dense, sparse, rho)
    _, after = best_convex_fusion(dense_after, sparse_after, rho)

    monotone = None
    if r_dense >= dense.r and r_sparse >= sparse.r:
        monotone = after >= before - 1e-12

    rng = np.random.default_rng(seed)
    improved = 0
    for _ in range(perturbations):
        r1, r2, base_rho, d_r1, d_r2, d_rho = _tradeoff_perturbation(rng)
        a, b = r1 - base_rho * r2, r2 - base_rho * r1
        satisfied = a * d_r1 + b * d_r2 > a * b * d_rho / (1 - base_rho ** 2)
        if satisfied and _envelope(r1 + d_r1, r2 + d_r2, base_rho + d_rho) > _envelope(r1, r2, base_rho):
            improved += 1

    return AlignmentTradeoffResult(dense.r, sparse.r, r_dense, r_sparse, before, after, monotone, perturbations, improved)


def aggregate_variance(k: int, trials: int, rng: np.random.Generator,
                       signal_mean: float = 1.0, signal_std: float = 1.0) -> float:
    """Variance of the equal-weight mean of k i.i.d. neighbor signals"""
    signals = rng.normal(signal_mean, signal_std, size=(trials, k))
    return float(signals.mean(axis=1).var())


@dataclass
class SparseVarianceResult:
    """Variance of neighborhood aggregates as the neighborhood grows"""
    variance_by_k: Dict[int, float]
    exponent: float
    passed: bool


def sparse_variance_check(k_values: Sequence[int] = (4, 16, 64, 256), trials: int = 10000,
                          seed: int = 0, signal_std: float = 1.0) -> SparseVarianceResult:
    """Fit the log-log slope of aggregate variance against K; expected near -1"""
    rng = np.random.default_rng(seed)
    variance = {int(k): aggregate_variance(int(k), trials, rng, signal_std=signal_std) for k in k_values}
    if signal_std == 0:
        return SparseVarianceResult(variance, 0.0, all(v == 0 for v in variance.values()))
    exponent = _loglog_slope(list(variance), list(variance.values()))
    return SparseVarianceResult(variance, exponent, -1.15 <= exponent <= -0.85)


# =============================================================================
# Verification suite
# =============================================================================

def _check(name: str, passed: bool, **details) -> CheckResult:
    level = logging.INFO if passed else logging.WARNING
    logger.log(level, f"{name}: {'pass' if passed else 'FAIL'}")
    return CheckResult(name=name, passed=bool(passed), details=details)


def _random_views(rng: np.random.Generator) -> Tuple[ViewStats, ViewStats]:
    mu = rng.uniform(0.5, 3.0, size=2)
    sigma = rng.uniform(0.5, 2.0, size=2)
    return ViewStats(float(mu[0]), float(sigma[0])), ViewStats(float(mu[1]), float(sigma[1]))


def check_fusion_boundaries(rng: np.random.Generator, cases: int = 50) -> CheckResult:
    worst = 0.0
    exact = True
    for _ in range(cases):
        v1, v2 = _random_views(rng)
        rho = float(rng.uniform(-0.9, 0.9))
        exact &= snr_fusion(1.0, v1, v2, rho) == v1.r and snr_fusion(0.0, v1, v2, rho) == v2.r
        near = snr_fusion(1.0 - 1e-12, v1, v2, rho)
        worst = max(worst, abs(near - v1.r))
    return _check("snr_fusion_boundaries", exact and worst < 1e-9, cases=cases, max_near_boundary_error=worst)


def check_fusion_monte_carlo(rng: np.random.Generator, samples: int = 1_000_000, alpha: float = 0.3) -> CheckResult:
    v1, v2 = _random_views(rng)
    rho = float(rng.uniform(-0.5, 0.8))
    cov = np.array([[v1.sigma ** 2, rho * v1.sigma * v2.sigma], [rho * v1.sigma * v2.sigma, v2.sigma ** 2]])
    draws = rng.multivariate_normal([v1.mu, v2.mu], cov, size=samples)
    blended = alpha * draws[:, 0] + (1 - alpha) * draws[:, 1]
    empirical = _empirical_snr(blended)
    expected = snr_fusion(alpha, v1, v2, rho)
    error = abs(empirical - expected) / abs(expected)
    return _check("snr_fusion_monte_carlo", error < 0.02, alpha=alpha, rho=rho, expected=expected,
                  empirical=empirical, relative_error=error)


def check_envelope(rng: np.random.Generator, cases: int = 20) -> CheckResult:
    worst_gap = math.inf
    for _ in range(cases):
        v1, v2 = _random_views(rng)
        rho = float(rng.uniform(-0.9, 0.9))
        _, best = best_convex_fusion(v1, v2, rho)
        worst_gap = min(worst_gap, fusion_envelope(v1, v2, rho) - best)
    r = 1.7
    symmetric = fusion_envelope(ViewStats(r, 1.0), ViewStats(r, 1.0), 0.0)
    passed = worst_gap >= -1e-9 and abs(symmetric - math.sqrt(2) * r) < 1e-12
    return _check("fusion_envelope_dominates", passed, cases=cases, min_envelope_margin=worst_gap)


def check_rho_threshold() -> CheckResult:
    pairs = [(2.0, 1.0), (1.0, 1.0), (1.0, 3.0), (2.5, 0.5)]
    results = {}
    for r1, r2 in pairs:
        check = rho_threshold_check(ViewStats(r1, 1.0), ViewStats(r2, 1.0))
        results[f"{r1}/{r2}"] = {"threshold": check.threshold, "verified": check.verified}
    return _check("rho_threshold", all(r["verified"] for r in results.values()), cases=results)


def check_min_floor(rng: np.random.Generator, cases: int = 10) -> CheckResult:
    alphas = np.linspace(0.0, 1.0, 101)
    rhos = np.linspace(0.0, 0.99, 100)
    held = all(min_floor_check(*_random_views(rng), alphas, rhos) for _ in range(cases))
    return _check("convex_fusion_min_floor", held, cases=cases, grid=[alphas.size, rhos.size])


def check_rho_monotonicity(rng: np.random.Generator, cases: int = 20) -> CheckResult:
    rhos = np.linspace(-0.9, 0.9, 37)
    decreasing = True
    for _ in range(cases):
        v1, v2 = _random_views(rng)
        alpha = float(rng.uniform(0.1, 0.9))
        values = np.array([snr_fusion(alpha, v1, v2, float(rho)) for rho in rhos])
        decreasing &= bool((np.diff(values) < 0).all())
    return _check("snr_decreasing_in_rho", decreasing, cases=cases)


def check_margin_scaling(rng: np.random.Generator, configs: int = 50, trials: int = 10000) -> CheckResult:
    violations = 0
    for index in range(configs):
        noise = NoiseModel(c=float(rng.uniform(0.5, 2.0)), n_interactions=int(rng.integers(4, 512)))
        result = simulate_margin_scaling(noise, float(rng.uniform(0.1, 2.0)), trials, seed=int(rng.integers(2 ** 31)),
                                         user_norm=float(rng.uniform(0.5, 3.0)))
        violations += not result.passed

    small = simulate_margin_scaling(NoiseModel(n_interactions=16), 1.0, trials, seed=1)
    large = simulate_margin_scaling(NoiseModel(n_interactions=64), 1.0, trials, seed=1)
    ratio = large.empirical_snr / small.empirical_snr
    zero = simulate_margin_scaling(NoiseModel(n_interactions=16), 0.0, trials, seed=2)
    passed = violations == 0 and abs(ratio - 2.0) <= 0.3 and abs(zero.empirical_snr) < 0.1
    return _check("cold_item_snr_bound", passed, configs=configs, violations=violations,
                  quadrupled_ratio=ratio, zero_gap_snr=zero.empirical_snr)


def check_degree_normalization(trials: int = 10000) -> CheckResult:
    result = simulate_degree_normalization(NoiseModel(n_interactions=64), (5.0, 20.0, 50.0), trials, seed=3)
    return _check("degree_normalized_scaling", result.passed, exponent=result.exponent,
                  degree_change=result.degree_change)


def check_alignment_tradeoff(rng: np.random.Generator) -> CheckResult:
    dense, sparse = ViewStats(1.5, 1.0), ViewStats(2.0, 1.0)
    identity = simulate_alignment_tradeoff(NoiseModel(), dense, sparse, 0.3, seed=4, perturbations=0)
    doubled = aligned_snr(NoiseModel(n_interactions=16, eta=16), dense, sparse)[0]
    gains = simulate_alignment_tradeoff(NoiseModel(n_interactions=16, k_neighbors=8, eta=8, kappa=4, eps=0.05),
                                       dense, sparse, 0.3, seed=int(rng.integers(2 ** 31)))
    passed = (
        identity.best_after == identity.best_before
        and abs(doubled - math.sqrt(2) * dense.r) < 1e-12
        and gains.passed
    )
    return _check("per_view_gains", passed, doubled_dense_snr=doubled, monotone=gains.monotone,
                  perturbations_improved=f"{gains.perturbations_improved}/{gains.perturbations}")


def check_sparse_variance(trials: int = 10000) -> CheckResult:
    result = sparse_variance_check(trials=trials, seed=5)
    rng = np.random.default_rng(6)
    ratio = aggregate_variance(1, trials, rng) / aggregate_variance(100, trials, rng)
    passed = result.passed and 80.0 <= ratio <= 120.0
    return _check("neighborhood_variance_scaling", passed, exponent=result.exponent, k1_over_k100=ratio)


def run_theory_lab(seed: int = 2024, trials: int = 10000, samples: int = 1_000_000) -> TheoryReport:
    """
    Run every verification and collect pass/fail results.

    Args:
        seed: Master seed; each check draws from one generator in a fixed order
        trials: Monte-Carlo trials per simulated configuration
        samples: Samples for the blended-margin Monte-Carlo check
    """
    started = time.time()
    rng = np.random.default_rng(seed)
    checks = [
        check_fusion_boundaries(rng),
        check_fusion_monte_carlo(rng, samples),
        check_envelope(rng),
        check_rho_threshold(),
        check_min_floor(rng),
        check_rho_monotonicity(rng),
        check_margin_scaling(rng, trials=trials),
        check_degree_normalization(trials),
        check_alignment_tradeoff(rng),
        check_sparse_variance(trials),
    ]
    report = TheoryReport(checks=checks, seed=seed, runtime_seconds=time.time() - started)
    logger.info(f"Theory checks: {sum(c.passed for c in checks)}/{len(checks)} passed "
                f"in {report.runtime_seconds:.1f}s")
    return report
