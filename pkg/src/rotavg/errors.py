"""Exception and warning types shared across the package."""


class RotavgError(Exception):
    """Base class for all package errors."""


class NearPiAmbiguity(RotavgError, ValueError):
    """Logarithm requested for a rotation whose angle is (numerically) pi."""


class ParseError(RotavgError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateEdge(ParseError):
    pass


class NonUnitQuaternion(ParseError):
    pass


class NoValidSeed(RotavgError):
    """No camera triplet passes the chaining check."""


class EmptyFrontier(RotavgError):
    pass


class Stalled(RotavgError):
    """Unregistered vertices remain but none is adjacent to the registered set."""


class TooLarge(RotavgError, ValueError):
    pass


class NoAlignmentPath(RotavgError):
    pass


class EmptyIntersection(RotavgError, ValueError):
    pass


class DidNotConverge(RuntimeWarning):
    """Emitted (as a warning) when the solver stops on its iteration cap."""


class DisconnectedStructure(UserWarning):
    pass


class ConfigError(RotavgError, ValueError):
    """Invalid run configuration."""
