"""Exception types shared across the library.

The CLI maps these onto exit codes: config/parse problems exit 2,
numerical aborts exit 3.
"""


class DimensionError(ValueError):
    """Inputs have incompatible or invalid shapes."""


class DomainError(ValueError):
    """Inputs are well shaped but violate a value constraint."""


class ParseError(ValueError):
    """A dataset or checkpoint file could not be parsed."""


class ConfigError(ValueError):
    """A run configuration is invalid."""


class NumericalError(RuntimeError):
    """A computation produced non-finite or degenerate values."""

    def __init__(self, message, step=None, divergence=None, row=None):
        super().__init__(message)
        self.step = step
        self.divergence = divergence
        self.row = row


class DegenerateRowError(NumericalError):
    """A transition-matrix row has no mass left to normalize."""
