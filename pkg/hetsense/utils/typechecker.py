"""
Runtime type checking of the public numerical functions with beartype.
HETSENSE_TYPECHECKING picks the behaviour on a violation: "warn" (default)
emits a UserWarning, "crash" raises (the test suite uses it) and
"disabled" returns the function untouched.
"""

from beartype import BeartypeConf, beartype
from beartype.typing import Callable, Literal

from .env import HETSENSE_TYPECHECKING


def make_typechecker(
    mode: Literal["disabled", "warn", "crash"],
) -> Callable[[Callable], Callable]:
    if mode == "crash":
        return beartype
    if mode == "warn":
        return beartype(conf=BeartypeConf(violation_type=UserWarning))
    if mode == "disabled":
        return lambda func: func
    raise ValueError(f"Unexpected HETSENSE_TYPECHECKING value '{mode}'")


optional_typecheck = make_typechecker(HETSENSE_TYPECHECKING)
