"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GraphError(ValueError):
    """Computation graph is malformed (cycle, missing node, bad wiring)."""


class ConvergenceError(RuntimeError):
    """Iterative solver ran out of iterations.

    Carries the last estimate so callers can decide whether it is usable.
    """

    def __init__(self, message: str, estimate: float):
        super().__init__(message)
        self.estimate = estimate


class DataFormatError(ValueError):
    """A dataset file does not match its binary format.

    ``offset`` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(ValueError):
    """Checkpoint file is unreadable, truncated, or version-incompatible."""


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss.

    ``checkpoint`` holds the last end-of-epoch state that was still finite
    (``None`` if divergence happened during the first epoch).
    """

    def __init__(self, message: str, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
