"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class RBSDEError(Exception):
    """Base class for every error raised by this package."""


class SpecStructureError(RBSDEError, ValueError):
    """The problem data is malformed (wrong lengths, non-finite parameters)."""


class HypothesisError(RBSDEError):
    """The problem data is well-formed but violates a standing hypothesis."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ContractionError(RBSDEError):
    """dt times the generator Lipschitz constant is not below one."""


class ProjectionNonConvergence(RBSDEError):
    """The oblique projection did not reach a fixed point.

    Usually the symptom of a free switching loop in the cost data.
    """

    def __init__(self, message, last_iterate=None, sweeps=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.sweeps = sweeps


class PicardNonConvergence(RBSDEError):
    def __init__(self, message, gaps=None):
        super().__init__(message)
        self.gaps = list(gaps or [])


class InternalConsistencyError(RBSDEError):
    """A property that holds by construction was observed to fail."""


class OracleGuardError(RBSDEError, ValueError):
    """Exhaustive enumeration was refused because it is too large."""

    def __init__(self, message, count=None):
        super().__init__(message)
        self.count = count


class ConfigError(RBSDEError, ValueError):
    """A run configuration is invalid; ``path`` names the offending key."""

    def __init__(self, message, path=()):
        self.path = tuple(path)
        where = "/".join(str(p) for p in self.path) or "<root>"
        super().__init__(f"{where}: {message}")


class VerificationFailure(RBSDEError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
