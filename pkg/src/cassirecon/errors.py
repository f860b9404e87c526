"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions are inconsistent with what an operation requires."""


class ConfigError(ValueError):
    """A run configuration contains unknown keys or malformed values."""


class FormatError(ValueError):
    """A binary container (HSC file or checkpoint) is malformed."""


class DetachedGraphError(RuntimeError):
    """A loss value has no gradient linkage back to any parameter."""


class NumericalError(RuntimeError):
    """A numerical invariant was violated (NaN, excessive imaginary residue)."""


class DivergenceError(NumericalError):
    """Training produced a non-finite loss."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
