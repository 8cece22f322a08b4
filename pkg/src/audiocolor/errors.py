"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class CheckpointError(RuntimeError):
    """Checkpoint is missing, malformed, or from an incompatible stage/version."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the last good checkpoint is referenced in args."""
