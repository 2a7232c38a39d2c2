"""
Subcommands of the sad command line
"""

# Import all tool modules to register their @cli.command decorators
from . import data
from . import sparse
from . import align
from . import dense
from . import evaluate
from . import pipeline
from . import theory
from . import artifacts
