"""
Dense view: matrix factorization over implicit feedback.

Training minimizes the degree-normalized weighted binary cross-entropy

    L = - sum_pos w * d_ui * log sigmoid(e_u . e_i)
        - sum_neg d_ui * log(1 - sigmoid(e_u . e_i))
        + l2_reg * ||embeddings touched by the batch||^2

with d_ui = 1 / sqrt(D_u * D_i) + alpha, where the degrees are counted on
the (possibly augmented) training matrix and w is the entry weight
(1 for observed pairs, the confidence factor for pseudo-positives).
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .dataset import DegreeVectors
from .matrix import EmbeddingTable, InteractionMatrix, ScoreVector, sample_unobserved
from .models import DegreeError, EmptyInput, MfConfig, NumericError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainBatch:
    """Positive entries of the training matrix plus their sampled negatives"""
    pos_users: np.ndarray
    pos_items: np.ndarray
    pos_weights: np.ndarray
    neg_users: np.ndarray
    neg_items: np.ndarray

    @property
    def size(self) -> int:
        return int(self.pos_users.size + self.neg_users.size)


@dataclass
class Gradients:
    """Gradient rows for the embeddings touched by one batch"""
    user_rows: np.ndarray
    user_grad: np.ndarray
    item_rows: np.ndarray
    item_grad: np.ndarray


@dataclass
class TrainingHistory:
    """Per-epoch loss and optional validation score"""
    losses: List[float]
    validation: List[float]
    best_epoch: int


def init_embeddings(cfg: MfConfig, n_users: int, n_items: int) -> EmbeddingTable:
    """
    Gaussian initialization with zero mean and scale 0.1 / sqrt(dim),
    deterministic given cfg.seed.
    """
    rng = np.random.default_rng(cfg.seed)
    scale = 0.1 / math.sqrt(cfg.dim)
    users = rng.normal(0.0, scale, size=(n_users, cfg.dim))
    items = rng.normal(0.0, scale, size=(n_items, cfg.dim))
    return EmbeddingTable(users, items)


def degree_weight(u: int, i: int, D: DegreeVectors, alpha: float, observed: bool = True) -> float:
    """
    Normalization factor 1 / sqrt(D_u * D_i) + alpha.

    Raises:
        DegreeError: If an observed pair has a zero degree
    """
    return float(degree_weights(np.array([u]), np.array([i]), D, alpha, observed)[0])


def degree_weights(users: np.ndarray, items: np.ndarray, D: DegreeVectors, alpha: float,
                   observed: bool = True) -> np.ndarray:
    """
    Vectorized `degree_weight`. Sampled negatives may involve items that
    never occur in training; their degree is taken as 1.
    """
    du = D.user_degree[users].astype(np.float64)
    di = D.item_degree[items].astype(np.float64)
    if observed:
        if (du <= 0).any() or (di <= 0).any():
            raise DegreeError("Observed pair with zero user or item degree")
    else:
        du = np.maximum(du, 1.0)
        di = np.maximum(di, 1.0)
    return 1.0 / np.sqrt(du * di) + alpha


def _scatter(rows: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    unique, inverse = np.unique(rows, return_inverse=True)
    grad = np.zeros((unique.size, values.shape[1]))
    np.add.at(grad, inverse, values)
    return unique, grad


def loss_and_grads(batch: TrainBatch, E: EmbeddingTable, D: DegreeVectors,
                   cfg: MfConfig) -> Tuple[float, Gradients]:
    """
    Weighted BCE loss of a batch and its exact gradients.

    Returns:
        (loss, gradients) where gradients hold one row per distinct user and
        item touched by the batch

    Raises:
        NumericError: If the loss is not finite
    """
    users = np.concatenate([batch.pos_users, batch.neg_users]).astype(np.int64)
    items = np.concatenate([batch.pos_items, batch.neg_items]).astype(np.int64)
    n_pos = batch.pos_users.size

    d_pos = degree_weights(batch.pos_users, batch.pos_items, D, cfg.alpha, observed=True)
    d_neg = degree_weights(batch.neg_users, batch.neg_items, D, cfg.alpha, observed=False)
    coef = np.concatenate([batch.pos_weights * d_pos, d_neg])
    sign = np.concatenate([np.ones(n_pos), -np.ones(batch.neg_users.size)])

    eu = E.user_matrix[users]
    ei = E.item_matrix[items]
    z = np.einsum("ij,ij->i", eu, ei)

    # -log sigmoid(z) for positives, -log(1 - sigmoid(z)) for negatives
    data_loss = float(np.sum(coef * np.logaddexp(0.0, -sign * z)))
    dz = -sign * coef * expit(-sign * z)

    user_rows, user_grad = _scatter(users, dz[:, None] * ei)
    item_rows, item_grad = _scatter(items, dz[:, None] * eu)

    reg_users = E.user_matrix[user_rows]
    reg_items = E.item_matrix[item_rows]
    reg_loss = cfg.l2_reg * float(np.sum(reg_users ** 2) + np.sum(reg_items ** 2))
    user_grad += 2.0 * cfg.l2_reg * reg_users
    item_grad += 2.0 * cfg.l2_reg * reg_items

    loss = data_loss + reg_loss
    if not math.isfinite(loss):
        raise NumericError("Non-finite training loss; reduce the learning rate")
    return loss, Gradients(user_rows, user_grad, item_rows, item_grad)


class _SgdOptimizer:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, matrix: np.ndarray, key: str, rows: np.ndarray, grad: np.ndarray) -> None:
        matrix[rows] -= self.lr * grad


class _AdamOptimizer:
    """Lazy Adam: moments are only updated for rows present in the batch"""

    def __init__(self, lr: float, shapes: Dict[str, Tuple[int, int]],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {key: np.zeros(shape) for key, shape in shapes.items()}
        self.v = {key: np.zeros(shape) for key, shape in shapes.items()}
        self.t = {key: np.zeros(shape[0], dtype=np.int64) for key, shape in shapes.items()}

    def step(self, matrix: np.ndarray, key: str, rows: np.ndarray, grad: np.ndarray) -> None:
        m, v, t = self.m[key], self.v[key], self.t[key]
        t[rows] += 1
        m[rows] = self.beta1 * m[rows] + (1 - self.beta1) * grad
        v[rows] = self.beta2 * v[rows] + (1 - self.beta2) * grad ** 2
        m_hat = m[rows] / (1 - self.beta1 ** t[rows])[:, None]
        v_hat = v[rows] / (1 - self.beta2 ** t[rows])[:, None]
        matrix[rows] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def iter_batches(R_hat: InteractionMatrix, cfg: MfConfig, rng: np.random.Generator):
    """Shuffled positive batches of one epoch with freshly sampled negatives"""
    users, items, weights, _ = R_hat.to_records()
    order = rng.permutation(users.size)
    for start in range(0, order.size, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        pos_users = users[idx]
        negatives = sample_unobserved(rng, R_hat, pos_users, cfg.neg_per_pos)
        yield TrainBatch(
            pos_users=pos_users,
            pos_items=items[idx],
            pos_weights=weights[idx],
            neg_users=np.repeat(pos_users, cfg.neg_per_pos),
            neg_items=negatives.ravel(),
        )


def train_mf(R_hat: InteractionMatrix, cfg: MfConfig, D: DegreeVectors,
             validate: Optional[Callable[[EmbeddingTable], float]] = None,
             history: Optional[TrainingHistory] = None) -> EmbeddingTable:
    """
    Train embeddings with mini-batch gradient descent.

    Args:
        R_hat: Training matrix (observed entries plus weighted pseudo-positives)
        cfg: Trainer configuration
        D: Degrees counted on R_hat
        validate: Optional callback scoring a table on held-out data; enables
            early stopping with cfg.patience
        history: Optional object receiving the loss trajectory

    Returns:
        Final (or best validated) table, rounded to float32 precision

    Raises:
        EmptyInput: If R_hat has no entries
        NumericError: If training diverges
    """
    if R_hat.nnz == 0:
        raise EmptyInput("Cannot train embeddings on an empty interaction matrix")
    if D.user_degree.shape[0] != R_hat.n_users or D.item_degree.shape[0] != R_hat.n_items:
        raise ShapeError("Degree vectors do not match the training matrix")

    table = init_embeddings(cfg, R_hat.n_users, R_hat.n_items)
    users, items = table.user_matrix.copy(), table.item_matrix.copy()
    rng = np.random.default_rng(cfg.seed)
    if cfg.optimizer == "adam":
        optimizer = _AdamOptimizer(cfg.lr, {"user": users.shape, "item": items.shape})
    else:
        optimizer = _SgdOptimizer(cfg.lr)

    losses: List[float] = []
    scores: List[float] = []
    best = (-math.inf, 0, None)
    stale = 0
    started = time.time()

    for epoch in range(1, cfg.epochs + 1):
        epoch_loss = 0.0
        current = EmbeddingTable(users, items)
        for batch in iter_batches(R_hat, cfg, rng):
            loss, grads = loss_and_grads(batch, current, D, cfg)
            optimizer.step(users, "user", grads.user_rows, grads.user_grad)
            optimizer.step(items, "item", grads.item_rows, grads.item_grad)
            epoch_loss += loss
        if not (np.isfinite(users).all() and np.isfinite(items).all()):
            raise NumericError(f"Non-finite embeddings after epoch {epoch}")
        losses.append(epoch_loss)

        message = f"Epoch {epoch}/{cfg.epochs}: loss {epoch_loss:.4f}"
        if validate is not None:
            score = validate(EmbeddingTable(users, items).rounded())
            scores.append(score)
            message += f", validation {score:.4f}"
            if score > best[0]:
                best = (score, epoch, (users.copy(), items.copy()))
                stale = 0
            else:
                stale += 1
        logger.info(message)
        if validate is not None and stale >= cfg.patience:
            logger.info(f"Early stopping at epoch {epoch}; best epoch {best[1]}")
            break

    best_epoch = len(losses)
    if validate is not None and best[2] is not None:
        users, items = best[2]
        best_epoch = best[1]
    if history is not None:
        history.losses[:] = losses
        history.validation[:] = scores
        history.best_epoch = best_epoch
    logger.info(f"Dense training finished in {time.time() - started:.1f}s")
    return EmbeddingTable(users, items).rounded()


def predict_dense(E: EmbeddingTable, user: int, exclude: Optional[np.ndarray] = None) -> ScoreVector:
    """Raw dot-product scores e_u . e_i over the full catalog"""
    scores = E.item_matrix @ E.user_matrix[user]
    mask = np.empty(0, dtype=np.int64) if exclude is None else np.asarray(exclude, dtype=np.int64)
    return ScoreVector(int(user), scores, mask)


def dense_scorer(E: EmbeddingTable) -> Callable[[np.ndarray], np.ndarray]:
    """Block scorer users -> E_U[users] @ E_I^T"""

    def score(users: np.ndarray) -> np.ndarray:
        return E.user_matrix[np.asarray(users, dtype=np.int64)] @ E.item_matrix.T

    return score
