"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Argument outside an operation's domain (empty cloud, bad range, shape mismatch)."""


class InvalidStateError(RuntimeError):
    """Operation invoked on an object in the wrong state (e.g. backward before forward)."""


class DataError(RuntimeError):
    """Missing or malformed files on disk."""


class DivergedTrainingError(FloatingPointError):
    """Non-finite loss or gradient during training."""

    def __init__(self, step, message="non-finite value during training"):
        super().__init__(f"{message} (step {step})")
        self.step = step
