"""
Sparse and dense matrix types shared by both views, plus the few kernels
every stage builds on: sparse row scoring, deterministic top-K selection and
uniform sampling of unobserved pairs.

All types are immutable after construction and safe to share read-only
across worker threads.
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .models import DataError, DuplicateEntry, ShapeError

logger = logging.getLogger(__name__)

# Rows of a score block are capped so one block stays around this many bytes
SCORE_BLOCK_BYTES = 64 * 1024 * 1024


class Provenance(IntEnum):
    """Where an interaction entry came from"""
    OBSERVED = 0
    PSEUDO_S2D = 1
    PSEUDO_D2S = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "Provenance":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise ValueError(f"Unknown provenance '{label}'")


class InteractionMatrix:
    """
    Binary user-item matrix in CSR form.

    Every stored entry carries a weight (1.0 for observed interactions, the
    confidence factor for sparse-to-dense pseudo-positives) and a provenance
    tag, so augmented matrices can be filtered back to their parts.
    """

    def __init__(self, csr: sp.csr_matrix, provenance: Optional[np.ndarray] = None):
        csr = sp.csr_matrix(csr, dtype=np.float64)
        csr.has_sorted_indices = False
        csr.sort_indices()
        if provenance is None:
            provenance = np.full(csr.nnz, Provenance.OBSERVED, dtype=np.int8)
        provenance = np.asarray(provenance, dtype=np.int8)
        if provenance.shape != (csr.nnz,):
            raise ShapeError(f"Provenance length {provenance.shape} does not match nnz {csr.nnz}")

        self._csr = csr
        self._provenance = provenance
        self._csc: Optional[sp.csc_matrix] = None
        self._keys: Optional[np.ndarray] = None
        self._validate()

    def _validate(self) -> None:
        csr = self._csr
        if csr.nnz > 1:
            rows = np.repeat(np.arange(csr.shape[0]), np.diff(csr.indptr))
            same_row = rows[1:] == rows[:-1]
            if (np.diff(csr.indices)[same_row] <= 0).any():
                raise DuplicateEntry("Item indices within a row must be strictly increasing")
        weights = csr.data
        if weights.size and (not np.isfinite(weights).all() or (weights < 0).any() or (weights > 1).any()):
            raise DataError("Entry weights must lie in [0, 1]")
        observed = self._provenance == Provenance.OBSERVED
        if (weights[observed] != 1.0).any():
            raise DataError("Observed entries must have weight exactly 1.0")

    # -------------------------------------------------------------------------
    # Shape and access
    # -------------------------------------------------------------------------

    @property
    def n_users(self) -> int:
        return self._csr.shape[0]

    @property
    def n_items(self) -> int:
        return self._csr.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self._csr.shape

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def csr(self) -> sp.csr_matrix:
        """Weighted CSR view (do not mutate)"""
        return self._csr

    @property
    def csc(self) -> sp.csc_matrix:
        if self._csc is None:
            self._csc = self._csr.tocsc()
        return self._csc

    @property
    def provenance(self) -> np.ndarray:
        return self._provenance

    @property
    def weights(self) -> np.ndarray:
        return self._csr.data

    def row(self, user: int) -> np.ndarray:
        """Sorted item indices of one user"""
        start, end = self._csr.indptr[user], self._csr.indptr[user + 1]
        return self._csr.indices[start:end]

    def binary(self) -> sp.csr_matrix:
        """CSR with every stored entry set to 1.0"""
        ones = self._csr.copy()
        ones.data = np.ones_like(ones.data)
        return ones

    def pair_keys(self) -> np.ndarray:
        """Sorted int64 keys user * n_items + item of all stored pairs"""
        if self._keys is None:
            users = np.repeat(np.arange(self.n_users, dtype=np.int64), np.diff(self._csr.indptr))
            self._keys = users * self.n_items + self._csr.indices.astype(np.int64)
        return self._keys

    def contains(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        """Vectorized membership test for (user, item) pairs"""
        keys = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items, dtype=np.int64)
        stored = self.pair_keys()
        if stored.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(stored, keys)
        pos = np.minimum(pos, stored.size - 1)
        return stored[pos] == keys

    def to_records(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(users, items, weights, provenance) arrays in canonical order"""
        users = np.repeat(np.arange(self.n_users, dtype=np.int64), np.diff(self._csr.indptr))
        return users, self._csr.indices.astype(np.int64), self._csr.data.copy(), self._provenance.copy()

    def to_triplets(self) -> List[Tuple[int, int, float]]:
        users, items, weights, _ = self.to_records()
        return [(int(u), int(i), float(w)) for u, i, w in zip(users, items, weights)]

    def select(self, *kinds: Provenance) -> "InteractionMatrix":
        """Subset of entries with the given provenance tags"""
        users, items, weights, prov = self.to_records()
        keep = np.isin(prov, [int(k) for k in kinds])
        return from_arrays(users[keep], items[keep], weights[keep], self.n_users, self.n_items, prov[keep])

    def count(self, kind: Provenance) -> int:
        return int((self._provenance == kind).sum())

    def __repr__(self) -> str:
        return f"InteractionMatrix(n_users={self.n_users}, n_items={self.n_items}, nnz={self.nnz})"


class SimilarityMatrix:
    """
    Item-item weight matrix stored column-wise: column i holds s_i, the
    coefficients that reconstruct item i from the other items. The diagonal
    is structurally absent.
    """

    def __init__(self, csc: sp.csc_matrix):
        csc = sp.csc_matrix(csc, dtype=np.float64)
        if csc.shape[0] != csc.shape[1]:
            raise ShapeError(f"Similarity matrix must be square, got {csc.shape}")
        csc.eliminate_zeros()
        csc.sort_indices()
        if csc.nnz and (csc.diagonal() != 0).any():
            raise DataError("Similarity matrix must have an empty diagonal")
        self._csc = csc
        self._csr: Optional[sp.csr_matrix] = None

    @classmethod
    def from_columns(cls, n_items: int, columns: Sequence[Tuple[np.ndarray, np.ndarray]]) -> "SimilarityMatrix":
        """Assemble from per-column (indices, values) pairs"""
        if len(columns) != n_items:
            raise ShapeError(f"Expected {n_items} columns, got {len(columns)}")
        lengths = [len(idx) for idx, _ in columns]
        indptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        indices = np.concatenate([np.asarray(idx, dtype=np.int64) for idx, _ in columns]) if n_items else np.empty(0, np.int64)
        values = np.concatenate([np.asarray(val, dtype=np.float64) for _, val in columns]) if n_items else np.empty(0)
        return cls(sp.csc_matrix((values, indices, indptr), shape=(n_items, n_items)))

    @property
    def n_items(self) -> int:
        return self._csc.shape[0]

    @property
    def nnz(self) -> int:
        return self._csc.nnz

    @property
    def csc(self) -> sp.csc_matrix:
        return self._csc

    @property
    def csr(self) -> sp.csr_matrix:
        if self._csr is None:
            self._csr = self._csc.tocsr()
        return self._csr

    def column(self, item: int) -> Tuple[np.ndarray, np.ndarray]:
        start, end = self._csc.indptr[item], self._csc.indptr[item + 1]
        return self._csc.indices[start:end], self._csc.data[start:end]

    def column_nnz(self) -> np.ndarray:
        return np.diff(self._csc.indptr)

    def to_dense(self) -> np.ndarray:
        return self._csc.toarray()

    def __repr__(self) -> str:
        return f"SimilarityMatrix(n_items={self.n_items}, nnz={self.nnz})"


@dataclass(frozen=True)
class EmbeddingTable:
    """User and item embedding matrices of the dense view"""
    user_matrix: np.ndarray
    item_matrix: np.ndarray

    def __post_init__(self):
        if self.user_matrix.ndim != 2 or self.item_matrix.ndim != 2:
            raise ShapeError("Embedding matrices must be two-dimensional")
        if self.user_matrix.shape[1] != self.item_matrix.shape[1]:
            raise ShapeError(
                f"Embedding sizes differ: {self.user_matrix.shape[1]} vs {self.item_matrix.shape[1]}"
            )

    @property
    def dim(self) -> int:
        return self.user_matrix.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_matrix.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_matrix.shape[0]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.user_matrix).all() and np.isfinite(self.item_matrix).all())

    def rounded(self) -> "EmbeddingTable":
        """Copy with values rounded to float32 precision, as persisted"""
        return EmbeddingTable(
            self.user_matrix.astype(np.float32).astype(np.float64),
            self.item_matrix.astype(np.float32).astype(np.float64),
        )


@dataclass(frozen=True)
class ScoreVector:
    """
    One user's raw scores over the full catalog.

    `exclude` lists items hidden from ranking (train positives); the raw
    scores stay finite and masking happens only when ranking.
    """
    user: int
    scores: np.ndarray
    exclude: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        if self.scores.ndim != 1:
            raise ShapeError("Scores must be one-dimensional")
        if not np.isfinite(self.scores).all():
            raise DataError(f"Non-finite score for user {self.user}")

    def __len__(self) -> int:
        return self.scores.shape[0]

    def masked(self) -> np.ndarray:
        """Scores with excluded items set to -inf"""
        out = self.scores.astype(np.float64, copy=True)
        out[self.exclude] = -np.inf
        return out

    def top(self, k: int) -> np.ndarray:
        return row_topk(self.scores, k, self.exclude)


# =============================================================================
# Construction
# =============================================================================

def from_arrays(users: np.ndarray, items: np.ndarray, weights: np.ndarray,
                n_users: int, n_items: int, provenance: np.ndarray = None) -> InteractionMatrix:
    """
    Build an InteractionMatrix from parallel arrays.

    Raises:
        IndexError: If an index is out of range
        DuplicateEntry: If a (user, item) pair repeats
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if provenance is None:
        provenance = np.full(users.shape, Provenance.OBSERVED, dtype=np.int8)
    provenance = np.asarray(provenance, dtype=np.int8)
    if not (users.shape == items.shape == weights.shape == provenance.shape):
        raise ShapeError("users, items, weights and provenance must have equal length")

    if users.size:
        if users.min() < 0 or users.max() >= n_users:
            raise IndexError(f"User index out of range [0, {n_users})")
        if items.min() < 0 or items.max() >= n_items:
            raise IndexError(f"Item index out of range [0, {n_items})")

    order = np.lexsort((items, users))
    users, items, weights, provenance = users[order], items[order], weights[order], provenance[order]
    if users.size > 1:
        same = (users[1:] == users[:-1]) & (items[1:] == items[:-1])
        if same.any():
            at = int(np.flatnonzero(same)[0])
            raise DuplicateEntry(f"Duplicate pair (user={users[at]}, item={items[at]})")

    indptr = np.zeros(n_users + 1, dtype=np.int64)
    np.cumsum(np.bincount(users, minlength=n_users), out=indptr[1:])
    csr = sp.csr_matrix((weights, items, indptr), shape=(n_users, n_items))
    return InteractionMatrix(csr, provenance)


def csr_from_triplets(triplets: Iterable[Tuple[int, int, float]], n_users: int, n_items: int,
                      provenance: Optional[Sequence[Provenance]] = None) -> InteractionMatrix:
    """
    Build a canonical InteractionMatrix from (user, item, weight) triplets.

    Args:
        triplets: Iterable of (user, item, weight)
        n_users: Number of users
        n_items: Number of items
        provenance: Optional provenance tag per triplet (default observed)

    Returns:
        InteractionMatrix with sorted rows

    Raises:
        IndexError: If an index is out of range
        DuplicateEntry: If a (user, item) pair repeats
    """
    triplets = list(triplets)
    if triplets:
        users, items, weights = (np.asarray(col) for col in zip(*triplets))
    else:
        users, items, weights = np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    prov = None if provenance is None else np.asarray([int(p) for p in provenance], dtype=np.int8)
    return from_arrays(users, items, weights, n_users, n_items, prov)


# =============================================================================
# Kernels
# =============================================================================

def score_block_rows(n_items: int) -> int:
    """Number of users scored together so a dense block stays bounded"""
    return int(max(1, min(4096, SCORE_BLOCK_BYTES // (8 * max(n_items, 1)))))


def user_blocks(users: np.ndarray, n_items: int) -> Iterable[np.ndarray]:
    """Split a user index array into bounded scoring blocks"""
    users = np.asarray(users, dtype=np.int64)
    step = score_block_rows(n_items)
    for start in range(0, users.size, step):
        yield users[start:start + step]


def spmm_block(R: InteractionMatrix, S: SimilarityMatrix, users: np.ndarray) -> np.ndarray:
    """
    Dense score rows R[users] @ S using the stored entry weights.

    Raises:
        ShapeError: If R and S disagree on the number of items
    """
    if R.n_items != S.n_items:
        raise ShapeError(f"R has {R.n_items} items but S has {S.n_items}")
    users = np.asarray(users, dtype=np.int64)
    return (R.csr[users] @ S.csr).toarray().reshape(users.size, R.n_items)


def spmm_rows(R: InteractionMatrix, S: SimilarityMatrix, users: Sequence[int]) -> List[ScoreVector]:
    """
    Score vectors y_u[i] = sum_j w(u, j) * s_ji for each requested user.

    Raises:
        ShapeError: If R and S disagree on the number of items
    """
    users = np.asarray(users, dtype=np.int64)
    vectors = []
    for block in user_blocks(users, R.n_items):
        scores = spmm_block(R, S, block)
        vectors.extend(ScoreVector(int(u), scores[row]) for row, u in enumerate(block))
    return vectors


def row_topk(values: Sequence[float], k: int, exclude: Iterable[int] = ()) -> np.ndarray:
    """
    Indices of the k largest values not in `exclude`, descending by value,
    ties broken by lower index. Fewer than k candidates returns them all.
    """
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    mask = np.ones(values.shape[0], dtype=bool)
    excluded = np.fromiter(exclude, dtype=np.int64) if not isinstance(exclude, np.ndarray) else exclude
    if excluded.size:
        mask[excluded] = False
    candidates = np.flatnonzero(mask)
    if candidates.size > k:
        candidate_values = values[candidates]
        cut = candidate_values.size - k
        threshold = np.partition(candidate_values, cut)[cut]
        candidates = candidates[candidate_values >= threshold]
    order = np.lexsort((candidates, -values[candidates]))
    return candidates[order[:k]]


def sample_unobserved(rng: np.random.Generator, observed: InteractionMatrix, users: np.ndarray,
                      n_per_user: int = 1) -> np.ndarray:
    """
    Draw items uniformly among those not stored in `observed` for each user.

    Returns:
        Array of shape (len(users), n_per_user)

    Raises:
        DataError: If a user has no unobserved item left
    """
    users = np.asarray(users, dtype=np.int64)
    n_items = observed.n_items
    if users.size == 0:
        return np.empty((0, n_per_user), dtype=np.int64)
    row_counts = np.diff(observed.csr.indptr)[users]
    if (row_counts >= n_items).any():
        raise DataError("Cannot sample negatives for a user who interacted with every item")

    flat_users = np.repeat(users, n_per_user)
    items = rng.integers(0, n_items, size=flat_users.size)
    pending = np.flatnonzero(observed.contains(flat_users, items))
    while pending.size:
        items[pending] = rng.integers(0, n_items, size=pending.size)
        pending = pending[observed.contains(flat_users[pending], items[pending])]
    return items.reshape(users.size, n_per_user)
