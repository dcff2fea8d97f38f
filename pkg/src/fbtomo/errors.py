"""Exception types shared across the package."""


class FbtomoError(Exception):
    """Base class for all package errors."""


class ParameterError(FbtomoError, ValueError):
    """An argument or configuration value is invalid."""


class ShapeError(FbtomoError, ValueError):
    """Array dimensions are inconsistent with the declared geometry."""


class DomainError(FbtomoError, ValueError):
    """A physically meaningless input (e.g. detector inside a source)."""


class BuildError(FbtomoError, RuntimeError):
    """The forward model cannot be assembled from the given geometry."""


class FormatError(FbtomoError, ValueError):
    """A file does not conform to one of the binary formats."""
