"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
VerificationFailure -> 3.
"""


class MintError(Exception):
    """Base class for all package errors."""


class UsageError(MintError):
    """Bad flags, malformed config, or an unusable combination of options."""


class DataError(MintError):
    """Invalid or inconsistent input data (dumps, labels, degenerate batches)."""


class VerificationFailure(MintError):
    """One or more verification suites failed."""
