"""Exception hierarchy shared by all modules."""


class VisipostError(Exception):
    """Base class for package errors."""

    exit_code = 1


class InvalidInputError(VisipostError, ValueError):
    exit_code = 2


class ConfigError(VisipostError, ValueError):
    exit_code = 2


class DataError(VisipostError):
    """Malformed or inconsistent input data (CSV rows, missing windows)."""

    exit_code = 3

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class MissingCovariateError(DataError):
    pass


class UnfitModelError(VisipostError):
    exit_code = 4


class NumericError(VisipostError):
    exit_code = 4


def add_context(exc, context):
    """Prefix ``exc``'s message with ``context`` (scheme, station, date, lead) and return it."""
    exc.args = (f"{context}: {exc.args[0] if exc.args else ''}",) + tuple(exc.args[1:])
    return exc
