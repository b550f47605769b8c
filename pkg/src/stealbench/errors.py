"""Exception hierarchy shared across the package."""


class StealbenchError(Exception):
    """Base class for all package errors."""


class InvalidInputError(StealbenchError, ValueError):
    pass


class DomainError(StealbenchError, ValueError):
    pass


class ShapeError(StealbenchError, ValueError):
    pass


class ConfigError(StealbenchError, ValueError):
    pass


class NumericalError(StealbenchError, ArithmeticError):
    """A loss or gradient became non-finite.

    ``layer`` names the layer where the non-finite value was first seen.
    """

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class TrainingDiverged(NumericalError):
    def __init__(self, step, loss, layer=None):
        where = f" in {layer}" if layer else ""
        super().__init__(f"training diverged at step {step}{where} (loss={loss!r})", layer)
        self.step = step
        self.loss = loss


class BudgetExhausted(StealbenchError):
    def __init__(self, requested, used, budget):
        super().__init__(
            f"query budget exhausted: requested {requested}, used {used} of {budget}"
        )
        self.requested = requested
        self.used = used
        self.budget = budget


class FormatError(StealbenchError, ValueError):
    """Malformed data file. ``offset`` is the byte offset (IDX) or row index (CSV)."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at {offset})")
        self.offset = offset


class ValidationError(StealbenchError, ValueError):
    """Experiment spec failed validation; nothing was computed or written."""
