"""Exception hierarchy shared by every module.

Two broad families matter for the CLI exit codes: ``InputError`` (bad user
input, malformed config or data -> exit 2) and ``NumericError`` (a numeric
routine failed -> exit 3). Everything else signals a programming/contract
bug and is allowed to surface as a plain traceback.
"""


class MissforecastError(Exception):
    """Base class for all package errors."""


class InputError(MissforecastError):
    """User-supplied input (config, CSV, CLI argument) violates a contract."""


class ContractViolationError(MissforecastError):
    """An internal API precondition was violated by the caller."""


class MaskedAccessError(ContractViolationError):
    """A value flagged as missing was read through the guarded accessor."""


class UnsupportedPatternError(MissforecastError):
    """A forecaster was queried with an observation pattern it cannot serve."""

    def __init__(self, pattern, reason=""):
        self.pattern = pattern
        msg = f"unsupported observation pattern {pattern}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class TrainingError(MissforecastError):
    """A training procedure cannot produce a forecaster from the given data."""


class NumericError(MissforecastError):
    """A numeric routine failed (non-convergence, underflow, singularity)."""


class SingularDesignError(NumericError):
    """Design matrix is rank deficient; carries the offending column label."""

    def __init__(self, column):
        self.column = column
        super().__init__(f"design matrix is rank deficient (column {column!r})")


class SeparationError(NumericError):
    """Logistic likelihood has no finite maximiser (perfect separation)."""
