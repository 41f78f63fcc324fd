"""Exceptions shared across the package, grouped by CLI exit code."""


class PhiGammaError(Exception):
    """Base class; exit code 5 unless a subclass narrows it."""

    exit_code = 5


class ValidationError(PhiGammaError):
    """Bad input: config, schema, or a violated operation precondition."""

    exit_code = 2


class NonUnitError(ValidationError):
    """Inversion requested for a non-invertible element or matrix."""


class NotInComplement(ValidationError):
    """Input expected in ker(R_n) has a nonzero trace component."""


class PrecisionError(PhiGammaError):
    """Precision exhausted: the answer is not determined at the ledger."""

    exit_code = 3


class EmptyWindowError(PrecisionError):
    """A series window shrank to nothing before the result was determined."""


class LevelOverflow(PrecisionError):
    """An operation needed a tower level beyond the configured m_max."""


class HypothesisViolated(PhiGammaError):
    """A quantitative hypothesis of a descent step fails on this input."""

    exit_code = 4


class NotContracting(HypothesisViolated):
    """An operator required to be topologically nilpotent is not."""


class CapExceeded(PhiGammaError):
    """Iteration cap hit before the requested bound was reached."""

    exit_code = 4
