"""Exception hierarchy shared by every iplearn module.

Each class also derives from the builtin exception a caller would expect for
the same situation, so ``except ValueError`` keeps working for configuration
problems and ``except IndexError`` for out-of-range ids.  ``exit_code`` is the
status the command-line interface returns when the error escapes a stage.
"""

from __future__ import annotations


class IplError(Exception):
    """Root of all iplearn errors."""

    exit_code: int = 1


class ConfigurationError(IplError, ValueError):
    """Invalid sizes, ranges or cross-field configuration."""

    exit_code = 2


class EvaluationError(IplError, IndexError):
    """A function was evaluated outside its domain."""


class ConvergenceError(IplError, RuntimeError):
    """An iterative solver hit its iteration cap.

    Parameters
    ----------
    message : str
        Human readable description.
    residual : float
        Residual (sup norm) at the last iterate.
    """

    def __init__(self, message: str, residual: float = float("nan")) -> None:
        super().__init__(message)
        self.residual = residual


class NumericalSolveError(ConvergenceError):
    """A direct linear solve left a residual above tolerance."""


class OptimizerError(IplError, FloatingPointError):
    """The optimizer received a non-finite gradient."""

    exit_code = 3


class TrainingDivergenceError(IplError, RuntimeError):
    """Training produced a non-finite loss or tripped the divergence detector."""

    exit_code = 3


class OracleError(IplError, RuntimeError):
    """An exact oracle could not produce a certified answer."""

    exit_code = 4


class ComparisonRefusedError(OracleError, ValueError):
    """Trained artifacts and oracle were produced under different settings."""


class DatasetParseError(IplError, ValueError):
    """A dataset record could not be parsed.

    Parameters
    ----------
    message : str
        Human readable description.
    line : int
        1-based line number of the offending record.
    """

    exit_code = 2

    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class ExperimentError(IplError):
    """Stage-tagged failure raised by the experiment harness.

    The exit code is inherited from the underlying cause.
    """

    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
