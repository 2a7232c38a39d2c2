"""
Cross-view alignment.

Sparse-to-dense: the item-item model nominates unobserved pairs (top-K items
per user and top-K users per item) that are injected into the embedding
trainer as confidence-weighted pseudo-positives.

Dense-to-sparse: the embedding model nominates pairs the same way; they are
OR-merged into the interaction matrix and the item-item model is refit on
the result.

Candidate selection streams bounded user blocks through a scorer, so the full
user x item score matrix is never materialized.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import anyio
import numpy as np

from .matrix import InteractionMatrix, Provenance, SimilarityMatrix, from_arrays, row_topk, user_blocks
from .models import AlignConfig, ConfigError, DisjointnessError, ShapeError, SlimConfig
from .slim import fit_slim, sparse_scorer

logger = logging.getLogger(__name__)

Scorer = Callable[[np.ndarray], np.ndarray]

# Rank assigned to pairs not selected from one side
UNRANKED = np.iinfo(np.int64).max


@dataclass(frozen=True)
class PseudoCandidates:
    """
    Unobserved pairs nominated by one view, with the rank each pair holds in
    its user's list and in its item's list (UNRANKED when absent).

    Selecting with smaller K values is a prefix filter, so one pass at the
    largest K serves every smaller K.
    """
    users: np.ndarray
    items: np.ndarray
    user_rank: np.ndarray
    item_rank: np.ndarray
    n_users: int
    n_items: int

    def select(self, k_user: int, k_item: int) -> Tuple[np.ndarray, np.ndarray]:
        keep = (self.user_rank < k_user) | (self.item_rank < k_item)
        return self.users[keep], self.items[keep]

    def count(self, k_user: int, k_item: int) -> int:
        return int(((self.user_rank < k_user) | (self.item_rank < k_item)).sum())


def _as_scorer(Y: Union[Scorer, np.ndarray]) -> Scorer:
    if callable(Y):
        return Y
    scores = np.asarray(Y, dtype=np.float64)
    return lambda users: scores[np.asarray(users, dtype=np.int64)]


def _score_block(scorer: Scorer, R: InteractionMatrix, block: np.ndarray, k_user: int, k_item: int):
    scores = np.asarray(scorer(block), dtype=np.float64)
    if scores.shape != (block.size, R.n_items):
        raise ShapeError(f"Scorer returned {scores.shape}, expected {(block.size, R.n_items)}")

    pair_users: List[np.ndarray] = []
    pair_items: List[np.ndarray] = []
    pair_ranks: List[np.ndarray] = []
    for row, user in enumerate(block):
        top = row_topk(scores[row], k_user, R.row(user))
        pair_users.append(np.full(top.size, user, dtype=np.int64))
        pair_items.append(top)
        pair_ranks.append(np.arange(top.size, dtype=np.int64))

    item_vals = item_users = None
    if k_item > 0:
        masked = scores.copy()
        sub = R.csr[block]
        rows = np.repeat(np.arange(block.size), np.diff(sub.indptr))
        masked[rows, sub.indices] = -np.inf
        take = min(k_item, block.size)
        order = np.argsort(-masked, axis=0, kind="stable")[:take]
        item_vals = np.take_along_axis(masked, order, axis=0)
        item_users = block[order]

    users = np.concatenate(pair_users) if pair_users else np.empty(0, np.int64)
    items = np.concatenate(pair_items) if pair_items else np.empty(0, np.int64)
    ranks = np.concatenate(pair_ranks) if pair_ranks else np.empty(0, np.int64)
    return users, items, ranks, item_vals, item_users


async def _score_blocks_parallel(scorer: Scorer, R: InteractionMatrix, blocks: List[np.ndarray],
                                 k_user: int, k_item: int, threads: int) -> list:
    results: list = [None] * len(blocks)
    limiter = anyio.CapacityLimiter(threads)

    async def run(index: int) -> None:
        results[index] = await anyio.to_thread.run_sync(
            _score_block, scorer, R, blocks[index], k_user, k_item, limiter=limiter
        )

    async with anyio.create_task_group() as tg:
        for index in range(len(blocks)):
            tg.start_soon(run, index)
    return results


def topk_candidates(Y: Union[Scorer, np.ndarray], R: InteractionMatrix, k_user: int, k_item: int,
                    threads: int = 1) -> PseudoCandidates:
    """
    Nominate unobserved pairs: the k_user best items of every user and the
    k_item best users of every item under the given scores. Ties prefer the
    lower index. Observed pairs of R are never nominated.

    Args:
        Y: Block scorer (users -> scores) or a dense U x I score array
        R: Observed interactions
        k_user: Items kept per user
        k_item: Users kept per item
        threads: Worker threads for block scoring; results do not depend on this
    """
    if k_user < 0 or k_item < 0:
        raise ConfigError("Top-K sizes must be >= 0")
    scorer = _as_scorer(Y)
    blocks = list(user_blocks(np.arange(R.n_users), R.n_items))
    if threads > 1 and len(blocks) > 1:
        results = anyio.run(_score_blocks_parallel, scorer, R, blocks, k_user, k_item, threads)
    else:
        results = [_score_block(scorer, R, block, k_user, k_item) for block in blocks]

    user_side = [(u, i, r) for u, i, r, _, _ in results]
    best_vals = np.full((0, R.n_items), -np.inf)
    best_users = np.full((0, R.n_items), -1, dtype=np.int64)
    if k_item > 0:
        # Blocks arrive in user order; a stable sort keeps the lower user on ties
        for _, _, _, vals, owners in results:
            vals = np.vstack([best_vals, vals])
            owners = np.vstack([best_users, owners])
            order = np.argsort(-vals, axis=0, kind="stable")[:k_item]
            best_vals = np.take_along_axis(vals, order, axis=0)
            best_users = np.take_along_axis(owners, order, axis=0)

    u_users = np.concatenate([u for u, _, _ in user_side]) if user_side else np.empty(0, np.int64)
    u_items = np.concatenate([i for _, i, _ in user_side]) if user_side else np.empty(0, np.int64)
    u_ranks = np.concatenate([r for _, _, r in user_side]) if user_side else np.empty(0, np.int64)

    valid = np.isfinite(best_vals)
    rank_grid = np.broadcast_to(np.arange(best_vals.shape[0])[:, None], best_vals.shape)
    item_grid = np.broadcast_to(np.arange(R.n_items)[None, :], best_vals.shape)
    i_users = best_users[valid]
    i_items = item_grid[valid].astype(np.int64)
    i_ranks = rank_grid[valid].astype(np.int64)

    users = np.concatenate([u_users, i_users])
    items = np.concatenate([u_items, i_items])
    user_rank = np.concatenate([u_ranks, np.full(i_users.size, UNRANKED, dtype=np.int64)])
    item_rank = np.concatenate([np.full(u_users.size, UNRANKED, dtype=np.int64), i_ranks])

    keys = users * R.n_items + items
    unique, inverse = np.unique(keys, return_inverse=True)
    merged_user_rank = np.full(unique.size, UNRANKED, dtype=np.int64)
    merged_item_rank = np.full(unique.size, UNRANKED, dtype=np.int64)
    np.minimum.at(merged_user_rank, inverse, user_rank)
    np.minimum.at(merged_item_rank, inverse, item_rank)

    return PseudoCandidates(
        users=unique // R.n_items,
        items=unique % R.n_items,
        user_rank=merged_user_rank,
        item_rank=merged_item_rank,
        n_users=R.n_users,
        n_items=R.n_items,
    )


def _tagged(users: np.ndarray, items: np.ndarray, R: InteractionMatrix, kind: Provenance) -> InteractionMatrix:
    return from_arrays(users, items, np.ones(users.size), R.n_users, R.n_items,
                       np.full(users.size, kind, dtype=np.int8))


def s2d_pseudo_positives(Y_S: Union[Scorer, np.ndarray], R: InteractionMatrix, cfg: AlignConfig,
                         threads: int = 1) -> InteractionMatrix:
    """
    Pseudo-positives R* for the dense view: an unobserved pair is selected
    when the item is among the user's k_user best items or the user is among
    the item's k_item best users under the sparse scores.

    Returns:
        Matrix of pseudo_s2d entries with weight 1.0, disjoint from R
    """
    k = max(cfg.k_user, cfg.k_item)
    if k == 0:
        return _tagged(np.empty(0, np.int64), np.empty(0, np.int64), R, Provenance.PSEUDO_S2D)
    candidates = topk_candidates(Y_S, R, cfg.k_user, cfg.k_item, threads)
    users, items = candidates.select(cfg.k_user, cfg.k_item)
    R_star = _tagged(users, items, R, Provenance.PSEUDO_S2D)
    logger.info(f"Sparse-to-dense alignment nominated {R_star.nnz} pseudo-positives "
                f"(k_user={cfg.k_user}, k_item={cfg.k_item})")
    return R_star


def augment_dense_input(R: InteractionMatrix, R_star: InteractionMatrix, lambda_conf: float) -> InteractionMatrix:
    """
    R_hat = R + lambda * R*: observed entries keep weight 1.0 and
    pseudo-positives get the confidence weight. Zero-weight entries are kept
    so they still count in degrees and are never sampled as negatives.

    Raises:
        DisjointnessError: If R* overlaps R
        ShapeError: If the shapes differ
    """
    if R.shape != R_star.shape:
        raise ShapeError(f"R is {R.shape} but R* is {R_star.shape}")
    if not 0.0 <= lambda_conf <= 1.0:
        raise ConfigError(f"lambda_conf must lie in [0, 1], got {lambda_conf}")

    users_p, items_p, _, _ = R_star.to_records()
    overlap = R.contains(users_p, items_p)
    if overlap.any():
        raise DisjointnessError(f"{int(overlap.sum())} pseudo-positives overlap observed interactions")

    users_o, items_o, weights_o, prov_o = R.to_records()
    return from_arrays(
        np.concatenate([users_o, users_p]),
        np.concatenate([items_o, items_p]),
        np.concatenate([weights_o, np.full(users_p.size, lambda_conf)]),
        R.n_users,
        R.n_items,
        np.concatenate([prov_o, np.full(users_p.size, Provenance.PSEUDO_S2D, dtype=np.int8)]),
    )


def d2s_augment(Y_D: Union[Scorer, np.ndarray], R: InteractionMatrix, k_d2s: int,
                threads: int = 1) -> InteractionMatrix:
    """
    R' = R OR Q, where Q holds the top-k_d2s unobserved items per user and
    users per item under the dense scores. Every entry of R' has weight 1.0;
    entries coming from Q are tagged pseudo_d2s.
    """
    if k_d2s == 0:
        return R
    users_o, items_o, _, prov_o = R.to_records()
    candidates = topk_candidates(Y_D, R, k_d2s, k_d2s, threads)
    users_q, items_q = candidates.select(k_d2s, k_d2s)
    fresh = ~R.contains(users_q, items_q)
    users_q, items_q = users_q[fresh], items_q[fresh]
    R_prime = from_arrays(
        np.concatenate([users_o, users_q]),
        np.concatenate([items_o, items_q]),
        np.concatenate([np.ones(users_o.size), np.ones(users_q.size)]),
        R.n_users,
        R.n_items,
        np.concatenate([prov_o, np.full(users_q.size, Provenance.PSEUDO_D2S, dtype=np.int8)]),
    )
    logger.info(f"Dense-to-sparse alignment added {users_q.size} interactions (k={k_d2s})")
    return R_prime


def realign_sparse(R_prime: InteractionMatrix, slim_cfg: SlimConfig,
                   threads: int = 1) -> Tuple[SimilarityMatrix, Scorer]:
    """
    Refit the item-item model on R'. Predictions of the refined model
    aggregate over R' as well.
    """
    S_prime = fit_slim(R_prime, slim_cfg, threads=threads)
    return S_prime, sparse_scorer(R_prime, S_prime)


def pseudo_ratio(n_observed: int, n_pseudo: int) -> float:
    total = n_observed + n_pseudo
    return n_pseudo / total if total else 0.0


def choose_k_for_ratio(Y_S: Union[Scorer, np.ndarray], R: InteractionMatrix, k_search: Sequence[int],
                       target: float, threads: int = 1) -> Tuple[int, float]:
    """
    Pick the K (used for both user and item sides) whose pseudo-positive
    fraction |R*| / (|R| + |R*|) is closest to `target`; ties prefer the
    smaller K.

    Returns:
        (K, achieved fraction)

    Raises:
        ConfigError: If the search set is empty
    """
    if not k_search:
        raise ConfigError("k_search is empty")
    ks = sorted(set(int(k) for k in k_search))
    candidates = topk_candidates(Y_S, R, ks[-1], ks[-1], threads)

    best_k, best_ratio, best_gap = ks[0], 0.0, np.inf
    for k in ks:
        ratio = pseudo_ratio(R.nnz, candidates.count(k, k))
        logger.debug(f"K={k}: pseudo fraction {ratio:.4f}")
        if abs(ratio - target) < best_gap:
            best_k, best_ratio, best_gap = k, ratio, abs(ratio - target)

    if not target / 2 <= best_ratio <= 2 * target:
        logger.warning(f"No K in {ks} reaches a pseudo fraction within [{target / 2:.3f}, {2 * target:.3f}]; "
                       f"using K={best_k} ({best_ratio:.3f})")
    else:
        logger.info(f"Chose K={best_k} for target pseudo fraction {target:.3f} (achieved {best_ratio:.3f})")
    return best_k, best_ratio


def pseudo_stats(M: InteractionMatrix) -> Dict[str, float]:
    """Entry counts per provenance and the pseudo fraction of an augmented matrix"""
    observed = M.count(Provenance.OBSERVED)
    s2d = M.count(Provenance.PSEUDO_S2D)
    d2s = M.count(Provenance.PSEUDO_D2S)
    return {
        "entries": M.nnz,
        "observed": observed,
        "pseudo_s2d": s2d,
        "pseudo_d2s": d2s,
        "pseudo_fraction": pseudo_ratio(observed, s2d + d2s),
    }
