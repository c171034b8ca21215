from . import utils
from .hetsense import hetsense

__VERSION__ = hetsense.VERSION
__version__ = __VERSION__


__all__ = ["hetsense", "utils"]
