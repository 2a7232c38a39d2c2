"""
Fusion, ranking evaluation and SNR commands.
"""

import argparse

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from cli_instance import cli
from tools.common import pipeline_from_args
from utils.response_formatter import metrics_summary, snr_summary, to_yaml


@cli.command("fuse-eval", "Pick the fusion weight and report Recall/NDCG overall and per popularity bucket")
def fuse_eval(args: argparse.Namespace) -> str:
    pipeline = pipeline_from_args(args)
    beta, reports = pipeline.fuse_eval()
    return to_yaml({
        "fuse_eval": {
            "beta": beta,
            "views": metrics_summary(reports.values()),
            "metrics": str(pipeline.path("metrics")),
            "buckets": str(pipeline.path("buckets")),
        }
    })


@cli.command("snr-report", "Estimate per-view signal-to-noise ratios and the dense/sparse margin correlation")
def snr_report(args: argparse.Namespace) -> str:
    pipeline = pipeline_from_args(args)
    report = pipeline.snr_report()
    return to_yaml({"snr_report": {**snr_summary(report), "file": str(pipeline.path("snr"))}})
