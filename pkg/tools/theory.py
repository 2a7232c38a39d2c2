"""
Closed-form and Monte-Carlo verification of the SNR results.
"""

import argparse
from pathlib import Path

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from cli_instance import arg, cli
from src.models import VerificationFailed
from src.theory import run_theory_lab
from utils.artifact_utils import write_yaml
from utils.response_formatter import optimize_for_yaml, theory_summary, to_yaml


@cli.command(
    "theory-lab",
    "Verify the fusion and alignment SNR results numerically",
    [
        arg("--trials", type=int, default=10000, help="Monte-Carlo trials per configuration (at least 10000)"),
        arg("--samples", type=int, default=1_000_000, help="Samples for the blended-margin check"),
    ],
)
def theory_lab(args: argparse.Namespace) -> str:
    seed = 2024 if args.seed is None else args.seed
    report = run_theory_lab(seed, args.trials, args.samples)
    path = Path(args.out or "runs/theory") / "theory.yaml"
    write_yaml(path, optimize_for_yaml(report))
    if not report.passed:
        failed = ", ".join(check.name for check in report.checks if not check.passed)
        raise VerificationFailed(f"Theory checks failed: {failed} (details in {path})")
    return to_yaml({"theory_lab": {**theory_summary(report), "report": str(path)}})
