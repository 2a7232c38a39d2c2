"""
Helpers shared by the subcommands.
"""

import argparse
import sys

import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from src.pipeline import Pipeline
from src.settings import get_settings
from utils.param_utils import config_from_args


def pipeline_from_args(args: argparse.Namespace) -> Pipeline:
    """Pipeline bound to the configuration the common flags describe"""
    show_progress = get_settings().rich_console and sys.stderr.isatty()
    return Pipeline(config_from_args(args), show_progress=show_progress)
