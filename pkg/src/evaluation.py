"""
Late fusion and evaluation.

All-items ranking protocol: every test user is scored against the full
catalog with their known positives hidden; Recall@K and NDCG@K are averaged
over users with at least one test item. Per-bucket metrics restrict both the
hits and the denominator to the test items of one popularity bucket.

SNR estimation samples negatives for each test positive and accumulates the
margin moments per bucket of the positive item, streaming over user blocks.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset import Bucket, Dataset, PopularityBuckets
from .matrix import InteractionMatrix, ScoreVector, from_arrays, row_topk, sample_unobserved, user_blocks
from .models import (
    BucketMetrics,
    ConfigError,
    CorrelationUndefined,
    MetricsReport,
    ShapeError,
    SnrReport,
    ViewSnr,
)

logger = logging.getLogger(__name__)

Scorer = Callable[[np.ndarray], np.ndarray]


# =============================================================================
# Fusion
# =============================================================================

def fuse(y_D: ScoreVector, y_S: ScoreVector, beta: float) -> ScoreVector:
    """
    Weighted vote y = y_D + beta * y_S.

    Raises:
        ShapeError: If the vectors differ in length
    """
    if len(y_D) != len(y_S):
        raise ShapeError(f"Score vectors differ in length: {len(y_D)} vs {len(y_S)}")
    exclude = np.union1d(y_D.exclude, y_S.exclude).astype(np.int64)
    return ScoreVector(y_D.user, y_D.scores + beta * y_S.scores, exclude)


def fused_scorer(dense: Scorer, sparse: Scorer, beta: float) -> Scorer:
    def score(users: np.ndarray) -> np.ndarray:
        return dense(users) + beta * sparse(users)

    return score


# =============================================================================
# Metrics
# =============================================================================

def _discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def recall_at_k(ranked: Sequence[int], test_items, k: int) -> Optional[float]:
    """
    |top-k of ranked intersected with test_items| / |test_items|.

    Returns:
        Recall in [0, 1], or None when the user has no test items
    """
    test = np.asarray(list(test_items) if not isinstance(test_items, np.ndarray) else test_items)
    if test.size == 0:
        return None
    hits = np.isin(np.asarray(ranked)[:k], test)
    return float(hits.sum() / test.size)


def ndcg_at_k(ranked: Sequence[int], test_items, k: int) -> Optional[float]:
    """
    Binary-relevance NDCG: DCG sums 1 / log2(p + 1) over hit positions
    p <= k, normalized by the DCG of min(k, |test_items|) leading hits.

    Returns:
        NDCG in [0, 1], or None when the user has no test items
    """
    test = np.asarray(list(test_items) if not isinstance(test_items, np.ndarray) else test_items)
    if test.size == 0:
        return None
    top = np.asarray(ranked)[:k]
    hits = np.isin(top, test)
    discounts = _discounts(max(k, 1))
    dcg = float(discounts[:top.size][hits].sum())
    idcg = float(discounts[:min(k, test.size)].sum())
    return dcg / idcg


@dataclass
class _MetricTotals:
    recall: Dict[int, float] = field(default_factory=dict)
    ndcg: Dict[int, float] = field(default_factory=dict)
    hits: Dict[int, int] = field(default_factory=dict)
    recommended: Dict[int, int] = field(default_factory=dict)
    test_items: int = 0
    users: int = 0

    def add(self, k: int, recall: float, ndcg: float, hits: int) -> None:
        self.recall[k] = self.recall.get(k, 0.0) + recall
        self.ndcg[k] = self.ndcg.get(k, 0.0) + ndcg
        self.hits[k] = self.hits.get(k, 0) + hits

    def means(self, totals: Dict[int, float], ks: Sequence[int]) -> Dict[int, float]:
        return {k: totals.get(k, 0.0) / self.users if self.users else 0.0 for k in ks}


def _user_metrics(top: np.ndarray, test: np.ndarray, k: int) -> Tuple[float, float, int]:
    hits = np.isin(top[:k], test)
    n_hits = int(hits.sum())
    discounts = _discounts(k)
    dcg = float(discounts[:min(k, top.size)][hits].sum())
    idcg = float(discounts[:min(k, test.size)].sum())
    return n_hits / test.size, dcg / idcg, n_hits


def _test_users(split: InteractionMatrix) -> np.ndarray:
    return np.flatnonzero(np.diff(split.csr.indptr) > 0)


def ranked_lists(scorer: Scorer, known: InteractionMatrix, users: np.ndarray, k: int):
    """Yield (user, top-k items) for each user, known positives hidden"""
    for block in user_blocks(users, known.n_items):
        scores = np.asarray(scorer(block), dtype=np.float64)
        for row, user in enumerate(block):
            yield int(user), row_topk(scores[row], k, known.row(user))


def evaluate(dataset: Dataset, scorer: Scorer, buckets: Optional[PopularityBuckets], ks: Sequence[int],
             split: str = "test", label: str = "model") -> MetricsReport:
    """
    All-items ranking metrics of one scorer on one split.

    Args:
        dataset: Dataset holding the split and the positives to hide
        scorer: Block scorer users -> (len(users), n_items) raw scores
        buckets: Popularity buckets for the per-bucket breakdown (optional)
        ks: Cutoffs
        split: "test" or "validation"
        label: Name recorded in the report

    Returns:
        MetricsReport with overall and per-bucket metrics
    """
    started = time.time()
    ks = sorted(set(int(k) for k in ks))
    k_max = ks[-1]
    target = dataset.split(split)
    known = dataset.known_positives(split)
    users = _test_users(target)

    overall = _MetricTotals()
    per_bucket = {b: _MetricTotals() for b in Bucket} if buckets is not None else {}

    for user, top in ranked_lists(scorer, known, users, k_max):
        test = target.row(user)
        overall.users += 1
        overall.test_items += test.size
        for k in ks:
            overall.add(k, *_user_metrics(top, test, k))

        if buckets is None:
            continue
        top_buckets = buckets.assignment[top]
        test_buckets = buckets.assignment[test]
        for bucket, totals in per_bucket.items():
            for k in ks:
                totals.recommended[k] = totals.recommended.get(k, 0) + int((top_buckets[:k] == bucket).sum())
            in_bucket = test[test_buckets == bucket]
            if in_bucket.size == 0:
                continue
            totals.users += 1
            totals.test_items += in_bucket.size
            for k in ks:
                totals.add(k, *_user_metrics(top, in_bucket, k))

    report = MetricsReport(
        label=label,
        split=split,
        recall=overall.means(overall.recall, ks),
        ndcg=overall.means(overall.ndcg, ks),
        hits={k: overall.hits.get(k, 0) for k in ks},
        test_items=overall.test_items,
        users=overall.users,
        runtime_seconds=time.time() - started,
    )
    for bucket, totals in per_bucket.items():
        recommended = {k: sum(t.recommended.get(k, 0) for t in per_bucket.values()) for k in ks}
        report.per_bucket[bucket.label] = BucketMetrics(
            recall=totals.means(totals.recall, ks),
            ndcg=totals.means(totals.ndcg, ks),
            hits={k: totals.hits.get(k, 0) for k in ks},
            test_items=totals.test_items,
            users=totals.users,
            share_of_recommendations={
                k: totals.recommended.get(k, 0) / recommended[k] if recommended[k] else 0.0 for k in ks
            },
        )

    summary = ", ".join(f"Recall@{k} {report.recall[k]:.4f} NDCG@{k} {report.ndcg[k]:.4f}" for k in ks)
    logger.info(f"{label} on {split} ({report.users} users): {summary}")
    return report


# =============================================================================
# Fusion weight search
# =============================================================================

def beta_search(dataset: Dataset, y_D: Scorer, y_S: Scorer, betas: Sequence[float], k: int,
                buckets: Optional[PopularityBuckets] = None, ks: Optional[Sequence[int]] = None,
                label: str = "fused") -> Tuple[float, MetricsReport]:
    """
    Choose the fusion weight maximizing Recall@k on the tuning split, then
    evaluate on test with it.

    The validation split is used for tuning when the dataset has one;
    otherwise the test split is used and a warning is logged. Ties resolve to
    the smallest beta.

    Raises:
        ConfigError: If `betas` is empty
    """
    if not betas:
        raise ConfigError("beta_search is empty")
    betas = sorted(float(b) for b in betas)
    split = "validation" if dataset.validation is not None else "test"
    if split == "test":
        logger.warning("No validation split: the fusion weight is tuned on the test split")

    target = dataset.split(split)
    known = dataset.known_positives(split)
    users = _test_users(target)
    totals = np.zeros(len(betas))

    for block in user_blocks(users, dataset.n_items):
        dense = np.asarray(y_D(block), dtype=np.float64)
        sparse = np.asarray(y_S(block), dtype=np.float64)
        for row, user in enumerate(block):
            test = target.row(user)
            exclude = known.row(user)
            for index, beta in enumerate(betas):
                top = row_topk(dense[row] + beta * sparse[row], k, exclude)
                totals[index] += np.isin(top, test).sum() / test.size

    recalls = totals / max(users.size, 1)
    best = 0
    for index in range(1, len(betas)):
        if recalls[index] > recalls[best]:
            best = index
    beta_star = betas[best]
    logger.info(f"Chose beta={beta_star:g} (Recall@{k} {recalls[best]:.4f} on {split}); "
                + ", ".join(f"{b:g}: {r:.4f}" for b, r in zip(betas, recalls)))

    report = evaluate(dataset, fused_scorer(y_D, y_S, beta_star), buckets, ks or [k], "test", label)
    report.beta = beta_star
    return beta_star, report


# =============================================================================
# Margins, SNR and correlation
# =============================================================================

class MomentAccumulator:
    """
    Streaming count, mean and centered second moments of one or two paired
    series, merged batch by batch.
    """

    def __init__(self):
        self.count = 0
        self.mean_x = 0.0
        self.mean_y = 0.0
        self.m2_x = 0.0
        self.m2_y = 0.0
        self.c_xy = 0.0

    def update(self, x: np.ndarray, y: Optional[np.ndarray] = None) -> None:
        x = np.asarray(x, dtype=np.float64).ravel()
        n = x.size
        if n == 0:
            return
        y = np.zeros(n) if y is None else np.asarray(y, dtype=np.float64).ravel()
        bx, by = float(x.mean()), float(y.mean())
        dx, dy = x - bx, y - by
        b_m2x, b_m2y, b_cxy = float(dx @ dx), float(dy @ dy), float(dx @ dy)

        total = self.count + n
        delta_x, delta_y = bx - self.mean_x, by - self.mean_y
        weight = self.count * n / total
        self.m2_x += b_m2x + delta_x * delta_x * weight
        self.m2_y += b_m2y + delta_y * delta_y * weight
        self.c_xy += b_cxy + delta_x * delta_y * weight
        self.mean_x += delta_x * n / total
        self.mean_y += delta_y * n / total
        self.count = total

    @property
    def std_x(self) -> float:
        return math.sqrt(max(self.m2_x, 0.0) / self.count) if self.count else 0.0

    def snr(self) -> ViewSnr:
        std = self.std_x
        if std <= 1e-12 * max(1.0, abs(self.mean_x)):
            return ViewSnr(snr=math.inf, mean=self.mean_x, std=std, count=self.count, zero_variance=True)
        return ViewSnr(snr=self.mean_x / std, mean=self.mean_x, std=std, count=self.count)

    def correlation(self) -> float:
        if self.count < 3:
            raise CorrelationUndefined(f"Need at least 3 paired margins, got {self.count}")
        if self.m2_x <= 0 or self.m2_y <= 0:
            raise CorrelationUndefined("A margin series has zero variance")
        rho = self.c_xy / math.sqrt(self.m2_x * self.m2_y)
        return float(min(1.0, max(-1.0, rho)))


def margin_correlation(margins_D: np.ndarray, margins_S: np.ndarray) -> float:
    """
    Pearson correlation of paired margins from identical (u, i+, i-) draws.

    Raises:
        ShapeError: If the series are not paired
        CorrelationUndefined: If fewer than 3 pairs or a series is constant
    """
    margins_D = np.asarray(margins_D, dtype=np.float64).ravel()
    margins_S = np.asarray(margins_S, dtype=np.float64).ravel()
    if margins_D.shape != margins_S.shape:
        raise ShapeError(f"Margin series differ in length: {margins_D.size} vs {margins_S.size}")
    acc = MomentAccumulator()
    acc.update(margins_D, margins_S)
    return acc.correlation()


def _all_observed(dataset: Dataset) -> InteractionMatrix:
    parts = [dataset.train, dataset.test] + ([dataset.validation] if dataset.validation is not None else [])
    users = np.concatenate([p.to_records()[0] for p in parts])
    items = np.concatenate([p.to_records()[1] for p in parts])
    keys = np.unique(users * dataset.n_items + items)
    return from_arrays(keys // dataset.n_items, keys % dataset.n_items, np.ones(keys.size),
                       dataset.n_users, dataset.n_items)


def sample_margins(scorers: Mapping[str, Scorer], dataset: Dataset, k_neg: int, seed: int):
    """
    Yield (positive items, {view: margins}) per user block. Margins have
    shape (n_positives, k_neg) and come from identical negative draws in
    every view.
    """
    rng = np.random.default_rng(seed)
    observed = _all_observed(dataset)
    users = _test_users(dataset.test)
    for block in user_blocks(users, dataset.n_items):
        counts = np.diff(dataset.test.csr.indptr)[block]
        pos_users = np.repeat(block, counts)
        pos_items = np.concatenate([dataset.test.row(u) for u in block]).astype(np.int64)
        negatives = sample_unobserved(rng, observed, pos_users, k_neg)
        local = np.repeat(np.arange(block.size), counts)

        margins = {}
        for view, scorer in scorers.items():
            scores = np.asarray(scorer(block), dtype=np.float64)
            positive = scores[local, pos_items]
            negative = scores[local[:, None], negatives]
            margins[view] = positive[:, None] - negative
        yield pos_items, margins


def snr_estimate(scorer: Union[Scorer, Mapping[str, Scorer]], dataset: Dataset,
                 buckets: Optional[PopularityBuckets], k_neg: int, seed: int,
                 rho_views: Optional[Tuple[str, str]] = None, beta: Optional[float] = None) -> SnrReport:
    """
    Empirical SNR = mean / std of margins y(u, i+) - y(u, i-) per view,
    overall and per bucket of the positive item.

    For every test positive, k_neg negatives are drawn uniformly from the
    items the user has not interacted with in any split. A constant margin
    series yields an infinite SNR flagged as zero-variance.

    Args:
        scorer: One block scorer or a mapping view name -> scorer
        dataset: Dataset providing the test positives
        buckets: Popularity buckets (optional)
        k_neg: Negatives per positive
        seed: Sampling seed
        rho_views: Pair of view names whose margin correlation is reported
        beta: Fusion weight recorded in the report

    Raises:
        ConfigError: If k_neg < 2
    """
    if k_neg < 2:
        raise ConfigError("k_neg must be at least 2")
    scorers = dict(scorer) if isinstance(scorer, Mapping) else {"model": scorer}
    if rho_views is not None and not set(rho_views) <= set(scorers):
        raise ConfigError(f"Unknown views for correlation: {rho_views}")

    groups = ["overall"] + ([b.label for b in Bucket] if buckets is not None else [])
    moments = {view: {g: MomentAccumulator() for g in groups} for view in scorers}
    paired = MomentAccumulator()

    for pos_items, margins in sample_margins(scorers, dataset, k_neg, seed):
        pos_buckets = buckets.assignment[pos_items] if buckets is not None else None
        for view, values in margins.items():
            moments[view]["overall"].update(values)
            if pos_buckets is None:
                continue
            for b in Bucket:
                moments[view][b.label].update(values[pos_buckets == b])
        if rho_views is not None:
            paired.update(margins[rho_views[0]], margins[rho_views[1]])

    report = SnrReport(k_neg=k_neg, seed=seed, beta=beta)
    for view, by_group in moments.items():
        report.views[view] = {g: acc.snr() for g, acc in by_group.items() if acc.count}
    if rho_views is not None:
        try:
            report.rho = paired.correlation()
            report.rho_views = list(rho_views)
        except CorrelationUndefined as e:
            logger.warning(f"Margin correlation undefined: {e}")

    for view, by_group in report.views.items():
        overall = by_group.get("overall")
        if overall is not None:
            logger.info(f"SNR[{view}] overall {overall.snr:.4f} over {overall.count} margins")
    if report.rho is not None:
        logger.info(f"Margin correlation {rho_views[0]}/{rho_views[1]}: {report.rho:.4f}")
    return report
