"""Exception hierarchy. The CLI maps the three branches onto exit codes 2, 3 and 4."""


class PFrontierError(Exception):
    pass


class InputError(PFrontierError):
    """Unreadable or malformed input data (exit 2)."""


class InsufficientDataError(PFrontierError):
    """Not enough usable data for the requested computation (exit 3)."""


class InvariantError(PFrontierError):
    """An internal consistency check failed (exit 4)."""


class ParseError(InputError):
    pass


class ValidationError(InputError):
    pass


class MissingRateError(InputError):
    pass


class DomainError(InsufficientDataError, ValueError):
    """Arguments outside an operation's domain."""
