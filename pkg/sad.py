#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Sparse and dense collaborative filtering with cross-view alignment.

Command-line entry point. Every subcommand prints a YAML summary on
success; failures map to exit codes by error family:

    0  success
    1  configuration error
    2  data or artifact error
    3  numeric failure
    4  theory verification failed
"""

import logging
import sys
from typing import Optional, Sequence

from dotenv import load_dotenv
from rich.logging import RichHandler

# Load environment variables from .env file
load_dotenv()

from src.models import ConfigError, SadError
from src.settings import get_settings

logger = logging.getLogger("sad")

# Import the shared command registry
from cli_instance import cli

# Import tools to register their commands
import tools  # noqa: F401


def configure_logging(verbose: bool = False) -> None:
    settings = get_settings()
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level.upper(), logging.INFO)
    if settings.rich_console and sys.stderr.isatty():
        logging.basicConfig(level=level, format="%(name)s - %(message)s", handlers=[RichHandler(show_path=False)],
                            force=True)
    else:
        logging.basicConfig(
            level=level,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            force=True,
        )


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    configure_logging("-v" in argv or "--verbose" in argv)
    try:
        output = cli.dispatch(argv)
    except SadError as e:
        logger.error(str(e))
        return e.exit_code
    except ValueError as e:
        # Unvalidated flag values from the parameter helpers
        logger.error(str(e))
        return ConfigError.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return 1
    if output:
        print(output, end="" if output.endswith("\n") else "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
