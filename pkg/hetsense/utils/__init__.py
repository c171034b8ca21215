# Using a __init__.py to force the order of initialization:
# 1. load the env variables
# 2. the numerical modules, then the experiment layer on top of them
from . import (
    env,
    flags,
    misc,
    sensing,
    rip,
    dynamics,
    optimizer,
    experiments,
    tasks,
)

__all__ = [
    "env",
    "flags",
    "misc",
    "sensing",
    "rip",
    "dynamics",
    "optimizer",
    "experiments",
    "tasks",
]
