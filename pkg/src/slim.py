"""
Sparse view: SLIM item-item model.

Each column s_i of the similarity matrix minimizes

    1/2 ||r_i - R s_i||^2 + l1 ||s_i||_1 + l2 ||s_i||^2,   s_ii = 0

and is solved independently by cyclic coordinate descent with
soft-thresholding. Columns share no state, so they can be solved in any
order or in parallel with identical results.
"""

import logging
import time
from typing import Callable, List, Optional, Sequence, Tuple

import anyio
import numpy as np
import scipy.sparse as sp

from .matrix import InteractionMatrix, ScoreVector, SimilarityMatrix, row_topk, spmm_block
from .models import EmptyInput, NumericError, ShapeError, SlimConfig

logger = logging.getLogger(__name__)


def soft_threshold(x: float, t: float) -> float:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def elastic_net_objective(s: np.ndarray, gram: np.ndarray, xty: float | np.ndarray, yty: float,
                          l1: float, l2: float) -> float:
    """
    1/2 ||y - X s||^2 + l1 ||s||_1 + l2 ||s||^2 written with the Gram matrix,
    where gram = X^T X, xty = X^T y and yty = y^T y.
    """
    quadratic = 0.5 * yty - float(s @ xty) + 0.5 * float(s @ gram @ s)
    return quadratic + l1 * float(np.abs(s).sum()) + l2 * float(s @ s)


def elastic_net_column(gram: np.ndarray, xty: np.ndarray, target: int, l1: float, l2: float,
                       tol: float = 1e-4, max_iters: int = 100, nonnegative: bool = False,
                       trace: Optional[List[float]] = None, yty: float = 0.0) -> np.ndarray:
    """
    Solve one elastic-net column by cyclic coordinate descent.

    The coordinate `target` is pinned at zero. Each sweep visits the
    coordinates that are nonzero or violate the optimality condition at the
    start of the sweep, in index order. Every visited coordinate is set to its
    exact minimizer, so the objective never increases.

    Args:
        gram: X^T X (items x items)
        xty: X^T y for the target column
        target: Index whose coefficient is excluded
        l1: L1 penalty
        l2: L2 penalty
        tol: Convergence threshold on the largest coefficient change of a sweep
        max_iters: Maximum number of sweeps
        nonnegative: Clip coefficients at zero
        trace: If given, receives the objective value after every sweep
        yty: y^T y, only used for the trace

    Returns:
        Coefficient vector with s[target] == 0
    """
    n = xty.shape[0]
    s = np.zeros(n)
    gs = np.zeros(n)
    gram_diag = np.diagonal(gram).astype(np.float64)
    denom = gram_diag + 2.0 * l2

    for sweep in range(max_iters):
        rho = xty - gs + gram_diag * s
        if nonnegative:
            violating = rho > l1
        else:
            violating = np.abs(rho) > l1
        candidates = np.flatnonzero((s != 0) | violating)
        candidates = candidates[candidates != target]

        max_delta = 0.0
        for j in candidates:
            if denom[j] <= 0:
                continue
            rho_j = xty[j] - gs[j] + gram_diag[j] * s[j]
            if nonnegative:
                new = max(rho_j - l1, 0.0) / denom[j]
            else:
                new = soft_threshold(rho_j, l1) / denom[j]
            delta = new - s[j]
            if delta != 0.0:
                s[j] = new
                gs += delta * gram[j]
                max_delta = max(max_delta, abs(delta))

        if trace is not None:
            trace.append(elastic_net_objective(s, gram, xty, yty, l1, l2))
        if not np.isfinite(max_delta):
            raise NumericError(f"Non-finite coefficient update in column {target}")
        if max_delta < tol:
            break

    return s


def _elastic_net_column_residual(X: sp.csc_matrix, y: np.ndarray, target: int, l1: float, l2: float,
                                 tol: float, max_iters: int, nonnegative: bool) -> np.ndarray:
    """Same update rule as `elastic_net_column`, keeping the residual instead of X^T X"""
    n = X.shape[1]
    s = np.zeros(n)
    residual = y.astype(np.float64, copy=True)
    col_sq = np.asarray(X.multiply(X).sum(axis=0)).ravel()
    denom = col_sq + 2.0 * l2

    for sweep in range(max_iters):
        rho = X.T @ residual + col_sq * s
        violating = rho > l1 if nonnegative else np.abs(rho) > l1
        candidates = np.flatnonzero((s != 0) | violating)
        candidates = candidates[candidates != target]

        max_delta = 0.0
        for j in candidates:
            if denom[j] <= 0:
                continue
            start, end = X.indptr[j], X.indptr[j + 1]
            rows, vals = X.indices[start:end], X.data[start:end]
            rho_j = float(vals @ residual[rows]) + col_sq[j] * s[j]
            new = max(rho_j - l1, 0.0) / denom[j] if nonnegative else soft_threshold(rho_j, l1) / denom[j]
            delta = new - s[j]
            if delta != 0.0:
                s[j] = new
                residual[rows] -= delta * vals
                max_delta = max(max_delta, abs(delta))

        if not np.isfinite(max_delta):
            raise NumericError(f"Non-finite coefficient update in column {target}")
        if max_delta < tol:
            break

    return s


def _truncate(s: np.ndarray, cap: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
    nonzero = np.flatnonzero(s)
    if cap is not None and nonzero.size > cap:
        keep = row_topk(np.abs(s[nonzero]), cap)
        nonzero = np.sort(nonzero[keep])
    return nonzero, s[nonzero]


class SlimSolver:
    """Per-column solver bound to one interaction matrix and configuration"""

    def __init__(self, R: InteractionMatrix, cfg: SlimConfig):
        if R.nnz == 0:
            raise EmptyInput("Cannot fit the item-item model on an empty interaction matrix")
        self.cfg = cfg
        self.n_items = R.n_items
        self._X = R.csc.astype(np.float64)
        gram_bytes = 8.0 * R.n_items * R.n_items
        self.use_gram = gram_bytes <= cfg.gram_budget_mb * 1024 * 1024
        self._gram = None
        if self.use_gram:
            self._gram = np.asarray((self._X.T @ self._X).toarray(), dtype=np.float64)
            if not np.isfinite(self._gram).all():
                raise NumericError("Non-finite Gram matrix")
        logger.info(
            f"Item-item solver ready: {self.n_items} columns, "
            f"{'precomputed Gram' if self.use_gram else 'residual updates'}"
        )

    def solve(self, item: int) -> Tuple[np.ndarray, np.ndarray]:
        """Fitted and truncated column `item` as (indices, values)"""
        cfg = self.cfg
        if self.use_gram:
            s = elastic_net_column(self._gram, self._gram[:, item].copy(), item, cfg.l1, cfg.l2,
                                   cfg.tol, cfg.max_iters, cfg.nonnegative)
        else:
            y = self._X[:, item].toarray().ravel()
            s = _elastic_net_column_residual(self._X, y, item, cfg.l1, cfg.l2,
                                             cfg.tol, cfg.max_iters, cfg.nonnegative)
        s[item] = 0.0
        return _truncate(s, cfg.topk_cap)


async def _solve_parallel(solver: SlimSolver, threads: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    columns: List[Optional[Tuple[np.ndarray, np.ndarray]]] = [None] * solver.n_items
    limiter = anyio.CapacityLimiter(threads)

    async def run(item: int) -> None:
        columns[item] = await anyio.to_thread.run_sync(solver.solve, item, limiter=limiter)

    async with anyio.create_task_group() as tg:
        for item in range(solver.n_items):
            tg.start_soon(run, item)
    return columns


def fit_slim(R: InteractionMatrix, cfg: SlimConfig, threads: int = 1,
             progress: Optional[Callable[[int], None]] = None) -> SimilarityMatrix:
    """
    Learn the item-item similarity matrix, one elastic-net column per item.

    Args:
        R: Interaction matrix (stored weights are used as regression targets)
        cfg: Solver configuration
        threads: Worker threads; results do not depend on this
        progress: Optional callback receiving the number of finished columns

    Returns:
        SimilarityMatrix with an empty diagonal and at most cfg.topk_cap
        entries per column

    Raises:
        EmptyInput: If R has no entries
        NumericError: If the solver produces non-finite values
    """
    started = time.time()
    solver = SlimSolver(R, cfg)

    if threads > 1:
        columns = anyio.run(_solve_parallel, solver, threads)
    else:
        columns = []
        for item in range(solver.n_items):
            columns.append(solver.solve(item))
            if progress is not None:
                progress(item + 1)

    S = SimilarityMatrix.from_columns(R.n_items, columns)
    if not np.isfinite(S.csc.data).all():
        raise NumericError("Non-finite entries in the fitted similarity matrix")
    logger.info(
        f"Fitted item-item model: {S.nnz} nonzeros "
        f"({S.nnz / max(R.n_items, 1):.1f} per column) in {time.time() - started:.1f}s"
    )
    return S


def predict_sparse(R: InteractionMatrix, S: SimilarityMatrix, user: int,
                   exclude: Optional[np.ndarray] = None) -> ScoreVector:
    """
    Neighborhood scores y_ui = sum_j r_uj s_ji for one user.

    Items in the user's row of R (or `exclude`, when given) are hidden from
    ranking through the ScoreVector mask.

    Raises:
        ShapeError: If R and S disagree on the number of items
    """
    if R.n_items != S.n_items:
        raise ShapeError(f"R has {R.n_items} items but S has {S.n_items}")
    scores = spmm_block(R, S, np.array([user]))[0]
    mask = R.row(user).astype(np.int64) if exclude is None else np.asarray(exclude, dtype=np.int64)
    return ScoreVector(int(user), scores, mask)


def sparse_scorer(R: InteractionMatrix, S: SimilarityMatrix) -> Callable[[np.ndarray], np.ndarray]:
    """Block scorer users -> R[users] @ S used by alignment and evaluation"""
    if R.n_items != S.n_items:
        raise ShapeError(f"R has {R.n_items} items but S has {S.n_items}")

    def score(users: np.ndarray) -> np.ndarray:
        return spmm_block(R, S, users)

    return score
