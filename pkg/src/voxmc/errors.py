"""Exception hierarchy shared across the package."""


class VoxmcError(Exception):
    """Base class for all package errors."""


class ValidationError(VoxmcError, ValueError):
    """A domain invariant was violated while constructing an object."""


class ParseError(VoxmcError, ValueError):
    """A configuration document could not be parsed.

    ``line`` and ``column`` locate syntax errors; ``field`` names the key
    whose value had the wrong shape.
    """

    def __init__(self, message, line=None, column=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}, column {column}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({'; '.join(where)})" if where else message)
        self.line = line
        self.column = column
        self.field = field


class SourceOutsideDomain(VoxmcError):
    pass


class VoxelOutOfRange(VoxmcError, IndexError):
    pass


class DimensionMismatch(VoxmcError, ValueError):
    pass


class AlreadyNormalized(VoxmcError):
    pass


class NonPositiveSlope(VoxmcError):
    """Pilot timings did not increase with photon count."""


class UncalibratedDevice(VoxmcError):
    pass


class InstanceTooLarge(VoxmcError, ValueError):
    pass


class NonPositiveRadius(VoxmcError, ValueError):
    pass


class AccumulatorOverflow(VoxmcError, OverflowError):
    pass


class IoError(VoxmcError, OSError):
    """A volume or sidecar file could not be written, read or verified."""
