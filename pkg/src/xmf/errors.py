"""Exception taxonomy shared by every subsystem.

The CLI maps these onto exit codes: usage problems exit 1, data/config/parse
problems exit 2, and training divergence exits 3.
"""


class XmfError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(XmfError, ValueError):
    """Operand dimensions do not compose; message names both shapes."""


class ParameterError(XmfError, ValueError):
    """A numeric argument is outside its legal range."""


class DataError(XmfError, ValueError):
    """Input data violates a contract (bad label, modality mismatch, ...)."""


class ConfigError(XmfError, ValueError):
    """A configuration object is internally inconsistent or infeasible."""


class ParseError(XmfError, ValueError):
    """A file could not be parsed; the message carries file and line."""


class DegenerateInputError(XmfError, ValueError):
    """A statistic is undefined for this input (zero variance, no calls)."""


class UsageError(XmfError, RuntimeError):
    """API misuse, e.g. a second backward pass without a new forward."""


class TrainingDivergedError(XmfError, RuntimeError):
    """Loss became non-finite during training; carries the epoch."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged (non-finite loss) at epoch {epoch}")
