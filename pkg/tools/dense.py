"""
Embedding model command.
"""

import argparse

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from cli_instance import cli
from tools.common import pipeline_from_args
from utils.response_formatter import to_yaml


@cli.command("train-dense", "Train the degree-weighted embedding model on the aligned input")
def train_dense(args: argparse.Namespace) -> str:
    pipeline = pipeline_from_args(args)
    E = pipeline.train_dense()
    return to_yaml({
        "train_dense": {
            "embeddings": str(pipeline.path("embeddings")),
            "n_users": E.n_users,
            "n_items": E.n_items,
            "dim": E.dim,
        }
    })
