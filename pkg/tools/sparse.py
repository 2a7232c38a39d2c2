"""
Item-item model command.
"""

import argparse

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from cli_instance import cli
from tools.common import pipeline_from_args
from utils.response_formatter import to_yaml


@cli.command("train-sparse", "Fit the item-item similarity model on the training split")
def train_sparse(args: argparse.Namespace) -> str:
    pipeline = pipeline_from_args(args)
    S = pipeline.train_sparse()
    per_column = S.column_nnz()
    return to_yaml({
        "train_sparse": {
            "similarity": str(pipeline.path("similarity")),
            "n_items": S.n_items,
            "nnz": S.nnz,
            "max_nnz_per_column": int(per_column.max()) if S.n_items else 0,
        }
    })
