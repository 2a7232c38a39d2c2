"""Shared fixtures: a hand-written toy dataset and a generated small dataset."""

from pathlib import Path

import numpy as np
import pytest

from src.dataset import Dataset, load_dataset
from src.matrix import InteractionMatrix, csr_from_triplets
from src.models import PipelineConfig

TOY_TRAIN = """0 0 1 2
1 1 2 3
2 0 2 4
3 3 4 5
4 5 6 7
5 0 6 7
"""

TOY_TEST = """0 3
1 4
2 1
3 6
4 0
5 5
"""


def write_adjacency(path: Path, rows) -> Path:
    with open(path, "w", encoding="utf-8") as f:
        for user, items in rows:
            f.write(" ".join(str(v) for v in [user, *items]) + "\n")
    return path


def matrix(pairs, n_users: int, n_items: int) -> InteractionMatrix:
    """Observed matrix from (user, item) pairs"""
    return csr_from_triplets([(u, i, 1.0) for u, i in pairs], n_users, n_items)


@pytest.fixture
def toy_files(tmp_path):
    train = tmp_path / "train.txt"
    test = tmp_path / "test.txt"
    train.write_text(TOY_TRAIN)
    test.write_text(TOY_TEST)
    return train, test


@pytest.fixture
def toy_dataset(toy_files) -> Dataset:
    train, test = toy_files
    return load_dataset(str(train), str(test), name="toy")


@pytest.fixture
def small_files(tmp_path):
    """20 users, 30 items: 5 train items and 1 test item per user"""
    rng = np.random.default_rng(7)
    train_rows, test_rows = [], []
    for user in range(20):
        items = rng.choice(30, size=6, replace=False)
        train_rows.append((user, sorted(int(i) for i in items[:5])))
        test_rows.append((user, [int(items[5])]))
    train = write_adjacency(tmp_path / "small_train.txt", train_rows)
    test = write_adjacency(tmp_path / "small_test.txt", test_rows)
    return train, test


@pytest.fixture
def small_dataset(small_files) -> Dataset:
    train, test = small_files
    return load_dataset(str(train), str(test), name="small")


@pytest.fixture
def small_config(small_files, tmp_path) -> PipelineConfig:
    train, test = small_files
    return PipelineConfig.model_validate({
        "data": {"name": "small", "train_path": str(train), "test_path": str(test)},
        "slim": {"l1": 1e-3, "l2": 1e-2, "max_iters": 50, "topk_cap": 10},
        "mf": {"dim": 4, "lr": 0.01, "batch_size": 32, "epochs": 3, "optimizer": "adam", "seed": 11},
        "align": {"k": 2, "lambda_conf": 0.5},
        "fusion": {"beta_search": [0, 1, 10]},
        "eval": {"ks": [5, 10], "tune_k": 5, "k_neg": 4},
        "out_dir": str(tmp_path / "run"),
        "seed": 11,
        "threads": 1,
    })
