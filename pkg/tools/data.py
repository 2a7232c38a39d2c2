"""
Dataset download command.
"""

import argparse

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from cli_instance import arg, cli
from src.downloader import DATASETS, download_dataset
from utils.response_formatter import to_yaml


@cli.command(
    "download",
    "Fetch the published train/test split of a public dataset",
    [
        arg("name", choices=DATASETS, help="Dataset to fetch"),
        arg("--dest", help="Target directory (default: <data_dir>/<name>)"),
        arg("--base-url", help="Mirror root URL"),
        arg("--overwrite", action="store_true", help="Replace existing files"),
    ],
)
def download(args: argparse.Namespace) -> str:
    paths = download_dataset(args.name, args.dest, args.base_url, args.overwrite)
    return to_yaml({"download": {"dataset": args.name, "files": {k: str(v) for k, v in paths.items()}}})
