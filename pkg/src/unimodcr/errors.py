"""Exception types shared across the package.

Geometric events (blow-up, collapse, degeneration) carry the time and, where
meaningful, the grid location at which they were detected.
"""

from __future__ import annotations


class UnimodError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(UnimodError, ValueError):
    pass


class GridTooSmall(UnimodError, ValueError):
    pass


class DegenerateFrame(UnimodError, ArithmeticError):
    pass


class DegenerateHypersurface(UnimodError, ArithmeticError):
    def __init__(self, message: str, location=None):
        super().__init__(message)
        self.location = location


class FrameResidualExceeded(UnimodError, ArithmeticError):
    pass


class NonRealA(UnimodError, ArithmeticError):
    pass


class IdentityViolation(UnimodError, ArithmeticError):
    pass


class ZeroScale(UnimodError, ValueError):
    pass


class ZeroB(UnimodError, ValueError):
    pass


class SingularLocus(UnimodError, ValueError):
    pass


class NonpositiveRadius(UnimodError, ValueError):
    pass


class DomainExceeded(UnimodError, ValueError):
    pass


class UnknownInvariants(UnimodError, LookupError):
    pass


class StepRejected(UnimodError, ArithmeticError):
    pass


class SnapshotFormatError(UnimodError, OSError):
    """A snapshot file is malformed or of an unknown format."""


class GeometricEvent(UnimodError):
    """An expected geometric phenomenon that ends an integration."""

    def __init__(self, message: str, t: float, location=None):
        super().__init__(message)
        self.t = float(t)
        self.location = location


class BlowUp(GeometricEvent):
    pass


class Collapse(GeometricEvent):
    pass


class DegenerationEvent(GeometricEvent):
    def __init__(self, message: str, t: float, location=None, reason: str = ""):
        super().__init__(message, t, location)
        self.reason = reason
