"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """Shapes, sizes or names that violate an operation's preconditions."""


class InvalidStateError(RuntimeError):
    """An object was used out of order, e.g. a stale forward cache."""


class NonFiniteError(FloatingPointError):
    """Training produced NaN/Inf; ``name`` identifies the first offending tensor."""

    def __init__(self, name, message=None):
        self.name = name
        super().__init__(message or f"non-finite values in tensor {name!r}")


class CorruptCheckpointError(ValueError):
    """Checkpoint bytes failed validation at ``offset``."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")
