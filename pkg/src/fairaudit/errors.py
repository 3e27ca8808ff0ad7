"""Exception hierarchy shared across the toolkit.

CLI exit-code mapping: SchemaError / MappingError / ImputationError /
DataError exit 2, NumericalError exit 3, UsageError exit 1.
"""


class FairauditError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(FairauditError):
    """Input file violates the expected schema (columns, enums, duplicates)."""


class DuplicateIdError(SchemaError):
    """The same subject_id appears more than once in one input."""


class MappingError(FairauditError):
    """A raw value could not be mapped onto a declared category."""


class ImputationError(FairauditError):
    """Missing-value imputation cannot proceed (e.g. no observed values)."""


class DataError(FairauditError):
    """Inputs are structurally valid but inconsistent or insufficient."""


class NumericalError(FairauditError):
    """A numerical procedure failed (divergence, NaN loss, singularity)."""


class UsageError(FairauditError):
    """Bad command-line invocation."""
