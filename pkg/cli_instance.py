"""
Shared command registry for all subcommands.
"""
import argparse
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

Argument = Tuple[Tuple[str, ...], Dict[str, Any]]


@dataclass
class Command:
    name: str
    help: str
    handler: Callable[[argparse.Namespace], str]
    arguments: List[Argument] = field(default_factory=list)


def arg(*flags: str, **kwargs: Any) -> Argument:
    """Argument spec in argparse's own vocabulary"""
    return flags, kwargs


class CommandRegistry:
    """Subcommands register themselves with `@cli.command(...)` at import time"""

    def __init__(self, prog: str, description: str):
        self.prog = prog
        self.description = description
        self.commands: Dict[str, Command] = {}

    def command(self, name: str, help: str, arguments: Sequence[Argument] = ()):
        def decorator(handler: Callable[[argparse.Namespace], str]):
            if name in self.commands:
                raise ValueError(f"Command '{name}' registered twice")
            self.commands[name] = Command(name, help, handler, list(arguments))
            return handler
        return decorator

    def build_parser(self) -> argparse.ArgumentParser:
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument("--config", help="YAML run configuration")
        common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                            help="Dotted configuration override, e.g. align.k=10 (repeatable)")
        common.add_argument("--seed", type=int, help="Global seed (also seeds the dense model)")
        common.add_argument("--threads", type=int, help="Worker threads")
        common.add_argument("--stage", help="Stage to start from (run only)")
        common.add_argument("--out", help="Run directory")

        parser = argparse.ArgumentParser(prog=self.prog, description=self.description)
        parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
        subparsers = parser.add_subparsers(dest="command", required=True)
        for command in self.commands.values():
            sub = subparsers.add_parser(command.name, help=command.help, parents=[common])
            for flags, kwargs in command.arguments:
                sub.add_argument(*flags, **kwargs)
            sub.set_defaults(handler=command.handler)
        return parser

    def dispatch(self, argv: Optional[Sequence[str]] = None) -> str:
        args = self.build_parser().parse_args(argv)
        return args.handler(args)


# Single global registry
cli = CommandRegistry("sad", "Dual-view (sparse + dense) collaborative filtering with cross-view alignment")
