"""
Artifact inspection command.
"""

import argparse

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from cli_instance import arg, cli
from utils.artifact_utils import describe_artifact, read_similarity, write_similarity_text
from utils.response_formatter import to_yaml


@cli.command(
    "inspect",
    "Print the header and summary statistics of a run artifact",
    [
        arg("path", help="Artifact file"),
        arg("--text", metavar="OUT", help="Also write a similarity matrix as 'row col value' triplets"),
    ],
)
def inspect(args: argparse.Namespace) -> str:
    info = describe_artifact(args.path)
    if args.text:
        if info["type"] != "similarity":
            raise ValueError(f"--text applies to similarity matrices, got {info['type']}")
        info["text"] = str(write_similarity_text(args.text, read_similarity(args.path)))
    return to_yaml({"inspect": info})
