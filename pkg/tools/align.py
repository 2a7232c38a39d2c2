"""
Cross-view alignment commands.
"""

import argparse

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from cli_instance import cli
from src.alignment import pseudo_stats
from tools.common import pipeline_from_args
from utils.response_formatter import to_yaml


@cli.command("align-s2d", "Add sparse-view pseudo-positives to the dense model's training input")
def align_s2d(args: argparse.Namespace) -> str:
    pipeline = pipeline_from_args(args)
    R_hat = pipeline.align_s2d()
    return to_yaml({"align_s2d": {"r_hat": str(pipeline.path("r_hat")), **pseudo_stats(R_hat)}})


@cli.command("align-d2s", "Add dense-view neighbours to the interactions and refit the item-item model")
def align_d2s(args: argparse.Namespace) -> str:
    pipeline = pipeline_from_args(args)
    R_prime, S_prime = pipeline.align_d2s()
    return to_yaml({
        "align_d2s": {
            "r_prime": str(pipeline.path("r_prime")),
            "similarity_refined": str(pipeline.path("similarity_refined")),
            "similarity_nnz": S_prime.nnz,
            **pseudo_stats(R_prime),
        }
    })
