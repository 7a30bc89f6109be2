"""Exception hierarchy shared across the simulator."""


class GaenError(Exception):
    """Base class for all simulator errors."""


class AlignmentError(GaenError, ValueError):
    """A TEK start interval is not aligned to its rolling period."""


class ValidityError(GaenError, ValueError):
    """An interval lies outside the validity window of a TEK."""


class AuthorizationError(GaenError, PermissionError):
    """An operation was attempted without the required authorization."""


class IntegrityError(GaenError):
    """A signed export failed signature verification."""


class ParseError(GaenError, ValueError):
    """Binary or text input could not be framed or decoded."""


class EmptyInputError(ParseError):
    """A capture log contained no well-formed records."""


class InsufficientDataError(GaenError, ValueError):
    """Too few observations to compute a statistic."""


class ConfigError(GaenError, ValueError):
    """A scenario or server configuration is invalid.

    ``field`` names the offending setting using ``section.key`` notation.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ContractError(GaenError, TypeError):
    """A caller passed an object that does not satisfy an API contract."""
