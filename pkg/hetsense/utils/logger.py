"""
Logging of hetsense.

Everything goes to a rotating loguru file in the user log directory. The
console gets coloured one-liners (white for progress, yellow for notable
facts, red for failures) printed through tqdm so they do not break progress
bars, and markdown tables rendered by rich.
"""

import json
import re
from pathlib import Path
from textwrap import dedent

import rtoml
from beartype.typing import Any, Callable, Optional, Type, Union
from loguru import logger
from platformdirs import user_log_dir
from rich.console import Console
from rich.markdown import Markdown
from tqdm import tqdm

from .flags import is_piped, is_silent
from .typechecker import optional_typecheck

log_dir = Path(user_log_dir(appname="hetsense"))
log_dir.mkdir(exist_ok=True, parents=True)
log_file = log_dir / "logs.txt"

logger.remove()
logger.add(
    log_file,
    rotation="100MB",
    retention=5,
    format="{time} {level} hetsense {process} {name}:{function}:{line} {message}",
    level="DEBUG",
    enqueue=False,
    colorize=False,
)

ANSI = {
    "white": "\033[0m",
    "yellow": "\033[93m",
    "red": "\033[91m",
}
RESET = "\033[0m"
_ANSI_PATTERN = re.compile(r"\033\[[0-9;]*m")

# level of the log file line written by each console colour
LEVELS = {"white": "INFO", "yellow": "WARNING", "red": "ERROR"}


def _as_text(obj: Any) -> str:
    "dicts as toml (json if toml cannot hold them), everything else through str"
    if isinstance(obj, dict):
        try:
            return rtoml.dumps(obj, pretty=True)
        except Exception:
            return json.dumps(obj, indent=2, default=str)
    if isinstance(obj, (list, tuple)):
        return ", ".join(str(item) for item in obj)
    return str(obj)


@optional_typecheck
def coloured_printer(color: str) -> Callable[..., str]:
    "printer that logs its message then echoes it to the console in `color`"
    assert color in ANSI, f"Unknown colour '{color}'"
    prefix, level = ANSI[color], LEVELS[color]

    def printer(message: Any, **kwargs) -> str:
        text = _ANSI_PATTERN.sub("", _as_text(message))
        logger.log(level, text)
        if not is_silent:
            tqdm.write(prefix + text + RESET, **kwargs)
        return text

    return printer


whi = coloured_printer("white")
yel = coloured_printer("yellow")
red = coloured_printer("red")

console = Console()


@optional_typecheck
def md_printer(message: str, color: Optional[str] = None) -> str:
    "render markdown with rich, or print it as plain text when piped"
    message = dedent(message)
    if is_silent:
        logger.info(message)
    elif is_piped:
        {"red": red, "yellow": yel}.get(color, whi)(message)
    else:
        logger.info(message)
        console.print(Markdown(message), style=color)
    return message


@optional_typecheck
def set_help_md_as_docstring(obj: Union[Type, Callable]) -> Union[Type, Callable]:
    "use hetsense/docs/help.md as the docstring of `obj`"
    help_file = Path(__file__).parent.parent / "docs" / "help.md"
    if not help_file.exists():
        red(f"Couldn't find the help file '{help_file}'")
        content = "Help documentation not found."
    else:
        content = help_file.read_text().strip() or "Help documentation is empty."
    obj.__doc__ = "# Content of hetsense/docs/help.md\n\n" + content
    return obj
