"""
Miscellanous functions etc.
"""

import hashlib
import json

import numpy as np
from beartype.typing import Any, List, Sequence

from .typechecker import optional_typecheck


@optional_typecheck
def hasher(text: str) -> str:
    """used to hash configurations and manifests"""
    return hashlib.sha256(text.encode()).hexdigest()[:20]


@optional_typecheck
def array_digest(arr: np.ndarray) -> str:
    "hash of the exact bytes of an array, shape included"
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256(str(arr.shape).encode() + arr.tobytes())
    return h.hexdigest()[:20]


@optional_typecheck
def config_digest(params: dict) -> str:
    "stable digest of a dict of parameters, key order independent"
    return hasher(json.dumps(params, sort_keys=True, default=str))


@optional_typecheck
def _name_key(name: str) -> int:
    return int(hashlib.sha256(name.encode()).hexdigest()[:8], 16)


@optional_typecheck
def substream(master_seed: int, name: str, *counters: int) -> np.random.SeedSequence:
    """Named sub-stream of a master seed.

    The spawn key is (hash of the name, *counters) so that adding a new named
    stream, or drawing more from one of them, never shifts the values of the
    others.
    """
    assert master_seed >= 0, f"Seeds must be nonnegative, got {master_seed}"
    return np.random.SeedSequence(
        entropy=master_seed,
        spawn_key=(_name_key(name),) + tuple(int(c) for c in counters),
    )


@optional_typecheck
def derive_seed(master_seed: int, name: str, *counters: int) -> int:
    "integer seed of a named sub-stream, for operations taking a plain seed"
    state = substream(master_seed, name, *counters).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


@optional_typecheck
def make_rng(seed: int, *counters: int) -> np.random.Generator:
    "generator for a plain integer seed, optionally split further by counters"
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=tuple(counters))
    )


def pairwise_sum(parts: Sequence[Any]) -> Any:
    """Sum in a fixed pairwise tree: ((p0+p1)+(p2+p3))+... The result only
    depends on the order of `parts`, not on how they were computed."""
    parts: List[Any] = list(parts)
    assert parts, "Nothing to sum"
    while len(parts) > 1:
        paired = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            paired.append(parts[-1])
        parts = paired
    return parts[0]


@optional_typecheck
def format_float(x: float) -> str:
    "shortest repr that round-trips exactly, independent of the locale"
    return repr(float(x))
