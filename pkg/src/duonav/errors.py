"""Exception types raised across the package."""


class DuoNavError(Exception):
    """Base class for all package errors."""


class BoundsError(DuoNavError, ValueError):
    """A query fell outside the world bounds."""


class StateError(DuoNavError, ValueError):
    """A vehicle state violates a sensor or model precondition."""


class GenerationError(DuoNavError, RuntimeError):
    """Procedural generation could not satisfy its constraints."""


class DegenerateMapError(DuoNavError, ValueError):
    """A probability map has no mass left after suppression."""


class ContractError(DuoNavError, ValueError):
    """An input violates an operation's documented contract."""


class DegenerateAltitudeError(DuoNavError, ValueError):
    """Reference altitude is not above every valid elevation."""


class AltitudeOrderError(DuoNavError, ValueError):
    """High/low altitude difference is not positive."""


class InvalidStartError(DuoNavError, ValueError):
    """Path search started from a blocked or out-of-frame cell."""


class ConfigError(DuoNavError, ValueError):
    """Invalid configuration or parameters."""


class EmptySetError(DuoNavError, ValueError):
    """Aggregation over an empty collection."""


class DataError(DuoNavError, ValueError):
    """Malformed or physically meaningless record data."""


class FormatError(DuoNavError, ValueError):
    """A text document does not follow its declared format."""
