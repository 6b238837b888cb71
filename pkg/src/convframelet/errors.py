"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """Raised when an argument violates a documented precondition."""


class NumericFailureError(ArithmeticError):
    """Raised when a computation produces non-finite values or fails to converge."""


class ConstructionError(RuntimeError):
    """Raised when an object cannot be built to its certified tolerance."""


class TrainingDivergedError(NumericFailureError):
    """Raised when the training loss exceeds the divergence threshold."""
