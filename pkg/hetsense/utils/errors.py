"""
Exception classes
"""


class DimensionError(Exception):
    def __init__(self, message: str) -> None:
        super().__init__(message)


class InvalidDistributionError(Exception):
    def __init__(self, message: str) -> None:
        super().__init__(message)


class ConfigurationError(Exception):
    def __init__(self, message: str) -> None:
        super().__init__(message)


class DivergenceError(Exception):
    """Raised when an iterate leaves the divergence threshold. The records
    computed so far are kept in `trajectory` (None if it happened before the
    first record)."""

    def __init__(self, message: str, trajectory=None) -> None:
        super().__init__(message)
        self.trajectory = trajectory


class BoundaryNotFoundError(Exception):
    def __init__(self, message: str) -> None:
        super().__init__(message)


class DomainViolationError(Exception):
    def __init__(self, message: str) -> None:
        super().__init__(message)
