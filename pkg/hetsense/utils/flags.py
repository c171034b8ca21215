"""
Command line switches that change how hetsense talks, read once from argv
so that any module can check them without going through fire.
"""

import sys

argv_tokens = set(sys.argv[1:])


def has_flag(name: str, short: str = None) -> bool:
    "True if --name (or --name=...) or -short is on the command line"
    if f"--{name}" in argv_tokens:
        return True
    if any(token.startswith(f"--{name}=") for token in argv_tokens):
        return True
    return short is not None and f"-{short}" in argv_tokens


is_debug = has_flag("debug")
is_verbose = is_debug or has_flag("verbose", "v")
is_silent = has_flag("silent", "s")

# no tqdm bars and no rich rendering when the output is piped
is_piped = not sys.stdout.isatty()
