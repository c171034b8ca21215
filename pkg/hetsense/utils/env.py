"""
Tunables read from HETSENSE_* environment variables.

Each variable has a default and an expected type. Values found in the
environment are parsed from text, checked with beartype and then exposed as
module level constants, e.g. `from .env import HETSENSE_N_JOBS`.
"""

import os
import sys

from beartype.door import is_bearable
from beartype.typing import Any, Dict, Literal, Optional, Tuple, Union

Number = Union[int, float]

# name: (default, expected type)
DEFAULTS: Dict[str, Tuple[Any, Any]] = {
    "HETSENSE_TYPECHECKING": ("warn", Literal["disabled", "warn", "crash"]),
    "HETSENSE_DEBUGGER": (False, bool),
    "HETSENSE_N_JOBS": (-1, int),
    "HETSENSE_PARALLEL_BACKEND": ("loky", Literal["loky", "threading", "multiprocessing"]),
    # C in T = ceil(C * log(1/alpha) / eta), left unspecified by the theory
    "HETSENSE_STEPS_CONSTANT": (10.0, Number),
    "HETSENSE_RIP_MARGIN": (0.05, Number),
    "HETSENSE_DIVERGENCE_FACTOR": (10.0, Number),
    "HETSENSE_REFINE_STEPS": (20, int),
    # a gaussian batch with more m*d*d entries is regenerated chunk by chunk
    "HETSENSE_MAX_DENSE_ENTRIES": (20_000_000, int),
}


def parse(val: str) -> Optional[Union[bool, int, float, str]]:
    "turn the text of an environment variable into a python value"
    lowered = val.strip().lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("", "none"):
        return None
    for cast in (int, float):
        try:
            return cast(lowered)
        except ValueError:
            pass
    return val.strip()


def load(environ: Dict[str, str]) -> Dict[str, Any]:
    values = {}
    for name, (default, expected) in DEFAULTS.items():
        assert is_bearable(default, expected), f"Bad default for {name}: {default!r}"
        values[name] = default

    for key, raw in environ.items():
        if not key.upper().startswith("HETSENSE_"):
            continue
        name = key.upper()
        if name not in DEFAULTS:
            print(
                f"Ignoring unknown environment variable '{key}', check for a typo",
                file=sys.stderr,
            )
            continue
        expected = DEFAULTS[name][1]
        value = parse(raw)
        if expected is int and isinstance(value, float) and value.is_integer():
            value = int(value)
        if not is_bearable(value, expected):
            raise TypeError(
                f"Environment variable '{key}'={raw!r} should be of type {expected}"
            )
        values[name] = value
    return values


_values = load(dict(os.environ))
HETSENSE_TYPECHECKING = _values["HETSENSE_TYPECHECKING"]
HETSENSE_DEBUGGER = _values["HETSENSE_DEBUGGER"]
HETSENSE_N_JOBS = _values["HETSENSE_N_JOBS"]
HETSENSE_PARALLEL_BACKEND = _values["HETSENSE_PARALLEL_BACKEND"]
HETSENSE_STEPS_CONSTANT = _values["HETSENSE_STEPS_CONSTANT"]
HETSENSE_RIP_MARGIN = _values["HETSENSE_RIP_MARGIN"]
HETSENSE_DIVERGENCE_FACTOR = _values["HETSENSE_DIVERGENCE_FACTOR"]
HETSENSE_REFINE_STEPS = _values["HETSENSE_REFINE_STEPS"]
HETSENSE_MAX_DENSE_ENTRIES = _values["HETSENSE_MAX_DENSE_ENTRIES"]
