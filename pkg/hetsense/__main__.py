"""
Entry point file
"""

import inspect
import sys

import fire
from beartype.typing import List, Optional

from .hetsense import debug_exceptions, hetsense
from .utils.errors import ConfigurationError
from .utils.logger import logger, md_printer, red, whi

SUBCOMMANDS = ["run", "sweep", "verify", "controller"]
# handled by the flags module, never passed to fire
GLOBAL_FLAGS = ["--debug", "--verbose", "-v", "--silent", "-s"]

USAGE = """
Usage: hetsense <run|sweep|verify|controller> [--config PATH] [--FLAG VALUE ...]

Use `hetsense --help` to list every flag.
"""


def allowed_flags(subcommand: str) -> List[str]:
    params = inspect.signature(getattr(hetsense, subcommand)).parameters
    return [name for name in params if name != "self"]


def check_argv(argv: List[str]) -> Optional[str]:
    "error message for an unknown subcommand or flag, None if argv is valid"
    positional = [a for a in argv if not a.startswith("-")]
    if not positional or positional[0] not in SUBCOMMANDS:
        return f"Expected a subcommand among {SUBCOMMANDS}, got {argv}"
    subcommand = positional[0]
    allowed = allowed_flags(subcommand)
    for arg in argv:
        if not arg.startswith("--"):
            continue
        name = arg[2:].split("=", 1)[0].replace("-", "_")
        if name.startswith("no") and name[2:] in allowed:
            continue
        if name not in allowed:
            return f"Unknown flag '--{name}' for '{subcommand}', expected one of {allowed}"
    return None


def cli_main(argv: List[str]) -> int:
    """Run the command line `argv` (without the program name) and return
    the exit status: 0 success, 1 configuration or usage error, 2
    divergence of a single run."""
    sysline = " " + " ".join(argv)
    if " --version" in sysline:
        print(f"hetsense version: {hetsense.VERSION}")
        return 0
    elif " --help" in sysline or " -h" in sysline:
        md_printer(hetsense.__doc__)
        return 0
    elif not argv:
        whi("No args shown. Use '--help' to display the help.")
        return 0

    if "--debug" in argv:
        debug_exceptions()
    argv = [a for a in argv if a not in GLOBAL_FLAGS]
    error = check_argv(argv)
    if error:
        red(error)
        md_printer(USAGE)
        return 1

    try:
        status = fire.Fire(hetsense, command=argv, serialize=lambda result: None)
    except ConfigurationError as err:
        red(f"Configuration error: {err}")
        return 1
    except fire.core.FireExit as err:
        logger.debug(f"fire exited with {err.code}")
        md_printer(USAGE)
        return 0 if err.code == 0 else 1
    return int(status) if isinstance(status, int) else 0


def cli_launcher() -> None:
    "entry point function"
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    cli_launcher()
