"""Domain error types raised by the core modules."""


class GeometryMismatchError(ValueError):
    """Two grids (or a grid and a forecast) do not share geometry."""

    def __init__(self, field: str, left, right):
        self.field = field
        super().__init__(f"geometry mismatch on '{field}': {left!r} != {right!r}")


class StreamFormatError(ValueError):
    pass


class ArchiveFormatError(ValueError):
    pass


class EmptyWindowError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass
