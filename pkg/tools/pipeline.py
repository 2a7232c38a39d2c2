"""
End-to-end run and sweep commands.
"""

import argparse

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from cli_instance import arg, cli
from src.pipeline import parse_grid, sweep
from tools.common import pipeline_from_args
from utils.response_formatter import metrics_summary, snr_summary, to_yaml


@cli.command("run", "Run every stage (or resume from --stage) and report the fused results")
def run(args: argparse.Namespace) -> str:
    pipeline = pipeline_from_args(args)
    result = pipeline.run(args.stage)
    summary = {"out_dir": str(result.out_dir), "beta": result.beta}
    if result.metrics:
        summary["views"] = metrics_summary(result.metrics.values())
    if result.snr is not None:
        summary["snr"] = snr_summary(result.snr)
    return to_yaml({"run": summary})


@cli.command(
    "sweep",
    "Run the pipeline over a grid of configuration values",
    [arg("--grid", action="append", required=True, metavar="KEY=V1,V2,...",
         help="Values for one dotted key, e.g. align.k=0,5,10 (repeatable)")],
)
def sweep_command(args: argparse.Namespace) -> str:
    pipeline = pipeline_from_args(args)
    table = sweep(pipeline.cfg, parse_grid(args.grid))
    return to_yaml({"sweep": {"points": len(table), "table": table.to_dict(orient="records")}})
