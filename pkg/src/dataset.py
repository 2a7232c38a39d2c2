"""
Dataset ingestion, degree vectors and popularity buckets.

Two on-disk formats are understood:

- adjacency: one line per user, ``user item item ...`` (the layout of the
  public Gowalla / Yelp2018 / Amazon-Book splits)
- triplet: ``user item [rating]`` per line, whitespace or tab separated

External ids are remapped to dense 0-based indices. Splits are consumed as
published and never reshuffled.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .matrix import InteractionMatrix, from_arrays
from .models import ParseError, SplitError

logger = logging.getLogger(__name__)

UNPOPULAR_QUANTILE = 0.80
POPULAR_QUANTILE = 0.95


class Bucket(IntEnum):
    """Item popularity group"""
    UNPOPULAR = 0
    NORMAL = 1
    POPULAR = 2

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class DegreeVectors:
    """Interaction counts per user and per item of one matrix"""
    user_degree: np.ndarray
    item_degree: np.ndarray

    @property
    def total(self) -> int:
        return int(self.user_degree.sum())


@dataclass(frozen=True)
class PopularityBuckets:
    """Assignment of every item to exactly one popularity bucket"""
    assignment: np.ndarray
    thresholds: Tuple[float, float] = (UNPOPULAR_QUANTILE, POPULAR_QUANTILE)

    def items(self, bucket: Bucket) -> np.ndarray:
        return np.flatnonzero(self.assignment == bucket)

    def sizes(self) -> Dict[str, int]:
        return {b.label: int((self.assignment == b).sum()) for b in Bucket}


@dataclass(frozen=True)
class Dataset:
    """Pre-split interactions sharing one user and item index space"""
    train: InteractionMatrix
    test: InteractionMatrix
    validation: Optional[InteractionMatrix] = None
    user_ids: List[str] = field(default_factory=list)
    item_ids: List[str] = field(default_factory=list)
    name: str = "dataset"

    @property
    def n_users(self) -> int:
        return self.train.n_users

    @property
    def n_items(self) -> int:
        return self.train.n_items

    def split(self, name: str) -> InteractionMatrix:
        if name == "test":
            return self.test
        if name == "validation" and self.validation is not None:
            return self.validation
        if name == "train":
            return self.train
        raise SplitError(f"Dataset has no '{name}' split")

    def known_positives(self, split: str) -> InteractionMatrix:
        """Matrix of positives hidden from ranking when evaluating `split`"""
        if split == "test" and self.validation is not None:
            users_t, items_t, _, _ = self.train.to_records()
            users_v, items_v, _, _ = self.validation.to_records()
            users = np.concatenate([users_t, users_v])
            items = np.concatenate([items_t, items_v])
            return from_arrays(users, items, np.ones(users.size), self.n_users, self.n_items)
        return self.train

    def statistics(self) -> Dict[str, float]:
        interactions = self.train.nnz + self.test.nnz + (self.validation.nnz if self.validation else 0)
        cells = max(self.n_users * self.n_items, 1)
        return {
            "users": self.n_users,
            "items": self.n_items,
            "interactions": interactions,
            "train_interactions": self.train.nnz,
            "test_interactions": self.test.nnz,
            "sparsity": 1.0 - interactions / cells,
        }


# =============================================================================
# Parsing
# =============================================================================

def _parse_adjacency(path: Path) -> List[Tuple[str, str, float]]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            for token in tokens:
                if not token.lstrip("-").isdigit():
                    raise ParseError(f"Expected integer id, got '{token}'", str(path), line_number)
            user = tokens[0]
            records.extend((user, item, 1.0) for item in tokens[1:])
    return records


def _parse_triplet(path: Path, rating_threshold: Optional[float]) -> List[Tuple[str, str, float]]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) not in (2, 3):
                raise ParseError(f"Expected 'user item [rating]', got {len(tokens)} fields", str(path), line_number)
            rating = 1.0
            if len(tokens) == 3:
                try:
                    rating = float(tokens[2])
                except ValueError:
                    raise ParseError(f"Rating '{tokens[2]}' is not a number", str(path), line_number)
            if rating_threshold is not None and rating < rating_threshold:
                continue
            records.append((tokens[0], tokens[1], rating))
    return records


def _id_order(ids: set) -> List[str]:
    if all(i.lstrip("-").isdigit() for i in ids):
        return sorted(ids, key=int)
    return sorted(ids)


def _to_matrix(records, user_index: Dict[str, int], item_index: Dict[str, int], label: str) -> InteractionMatrix:
    pairs = sorted({(user_index[u], item_index[i]) for u, i, _ in records})
    if len(pairs) < len(records):
        logger.warning(f"Dropped {len(records) - len(pairs)} duplicate pairs from the {label} split")
    users = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
    items = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
    return from_arrays(users, items, np.ones(len(pairs)), len(user_index), len(item_index))


def load_dataset(train_path: str, test_path: str, format: str = "adjacency",
                 validation_path: Optional[str] = None, rating_threshold: Optional[float] = None,
                 name: str = "dataset") -> Dataset:
    """
    Load pre-split interaction files into a Dataset.

    Args:
        train_path: Training split
        test_path: Test split
        format: "adjacency" or "triplet"
        validation_path: Optional validation split
        rating_threshold: Triplet ratings below this are dropped (None keeps all)
        name: Dataset label for logs and reports

    Returns:
        Dataset whose splits share one index space

    Raises:
        ParseError: If a line is malformed
        SplitError: If the test split is empty or overlaps train
    """
    paths = {"train": train_path, "test": test_path}
    if validation_path:
        paths["validation"] = validation_path

    records = {}
    for split, path in paths.items():
        path = Path(path)
        if not path.exists():
            raise ParseError(f"File not found: {path}")
        if format == "adjacency":
            records[split] = _parse_adjacency(path)
        elif format == "triplet":
            records[split] = _parse_triplet(path, rating_threshold)
        else:
            raise ParseError(f"Unknown format '{format}'")

    if not records["test"]:
        raise SplitError(f"Test split '{test_path}' has no interactions")

    user_ids = _id_order({r[0] for recs in records.values() for r in recs})
    item_ids = _id_order({r[1] for recs in records.values() for r in recs})
    user_index = {uid: n for n, uid in enumerate(user_ids)}
    item_index = {iid: n for n, iid in enumerate(item_ids)}

    matrices = {split: _to_matrix(recs, user_index, item_index, split) for split, recs in records.items()}
    train = matrices["train"]

    for split in ("test", "validation"):
        if split not in matrices:
            continue
        users, items, _, _ = matrices[split].to_records()
        overlap = train.contains(users, items)
        if overlap.any():
            raise SplitError(f"{int(overlap.sum())} {split} pairs also appear in train")
        cold = np.diff(train.csr.indptr)[users] == 0
        if cold.any():
            logger.warning(f"Excluding {int(cold.sum())} {split} pairs of users without train interactions")
            keep = ~cold
            matrices[split] = from_arrays(users[keep], items[keep], np.ones(int(keep.sum())),
                                          train.n_users, train.n_items)

    if matrices["test"].nnz == 0:
        raise SplitError("No test pair belongs to a user with train interactions")

    dataset = Dataset(
        train=train,
        test=matrices["test"],
        validation=matrices.get("validation"),
        user_ids=user_ids,
        item_ids=item_ids,
        name=name,
    )
    stats = dataset.statistics()
    logger.info(
        f"Loaded {name}: {stats['users']} users, {stats['items']} items, "
        f"{stats['interactions']} interactions, sparsity {stats['sparsity']:.5f}"
    )
    return dataset


# =============================================================================
# Degrees and buckets
# =============================================================================

def degrees(R: InteractionMatrix) -> DegreeVectors:
    """
    Count stored entries per user and per item. Pseudo-positives count once
    regardless of their weight.
    """
    user_degree = np.diff(R.csr.indptr).astype(np.int64)
    item_degree = np.bincount(R.csr.indices, minlength=R.n_items).astype(np.int64)
    return DegreeVectors(user_degree, item_degree)


def popularity_buckets(train: InteractionMatrix) -> PopularityBuckets:
    """
    Split items into Unpopular (lowest 80% by train degree), Normal (next
    15%) and Popular (top 5%). Items are ordered by (degree, index), so ties
    land in the lower bucket by lower index.
    """
    n_items = train.n_items
    item_degree = degrees(train).item_degree
    order = np.lexsort((np.arange(n_items), item_degree))

    n_popular = math.ceil(n_items * (1 - POPULAR_QUANTILE) - 1e-9)
    n_unpopular = min(math.floor(n_items * UNPOPULAR_QUANTILE + 1e-9), n_items - n_popular)

    assignment = np.full(n_items, Bucket.NORMAL, dtype=np.int8)
    assignment[order[:n_unpopular]] = Bucket.UNPOPULAR
    if n_popular:
        assignment[order[n_items - n_popular:]] = Bucket.POPULAR
    return PopularityBuckets(assignment)
