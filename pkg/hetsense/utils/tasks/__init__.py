from . import sweep, verify

__all__ = ["sweep", "verify"]
