"""Exception types shared across the package."""


class MfgridError(Exception):
    """Base class for package errors."""


class ConfigError(MfgridError):
    """Invalid, unknown, or inconsistent configuration (CLI exit code 2)."""


class PositivityError(MfgridError):
    """A density interpolant or terminal slice is not strictly positive.

    Raised by the energy kernels as a domain error; solvers react by
    shrinking the step, they never clamp silently.
    """


class SolverError(MfgridError):
    """A solver failed to make progress (CLI exit code 3)."""


class FormatError(MfgridError):
    """A file does not conform to its binary/text format (CLI exit code 4)."""
