"""Exception hierarchy shared by the library and the command line."""


class XsepError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ArgumentError(XsepError, ValueError):
    """Invalid argument shape, range or combination."""

    exit_code = 2


class FormatError(XsepError):
    """Malformed or unsupported file content."""

    exit_code = 3

    def __init__(self, message, offset=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.offset = offset
        self.path = path


class NumericalError(XsepError, ArithmeticError):
    """A numerical procedure could not produce a valid result."""

    exit_code = 4


class InfeasibleError(NumericalError):
    """Equality-constrained problem whose right-hand side is outside the range."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (least-squares residual {residual:.3e})")
        self.residual = residual
