"""Exception hierarchy shared by the library and the command line."""


class PolarError(Exception):
    """Base class for every error raised on purpose by the package."""


class ResourceBudgetError(PolarError):
    """A table of 2^n entries does not fit the configured budget or family cap."""


class TableFormatError(PolarError):
    """A reliability cache file cannot be parsed."""


class TableVersionError(TableFormatError):
    pass


class TableTruncatedError(TableFormatError):
    pass


class TableChecksumError(TableFormatError):
    pass


class CandidateError(PolarError, ValueError):
    """A scaling-exponent candidate is not sampled on [0, 1] or is not positive inside."""


class WindowError(PolarError, ValueError):
    """Too few sweep rows inside the requested slope window."""
