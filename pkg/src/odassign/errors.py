"""Exception types raised across the package."""


class OdassignError(Exception):
    """Base class for all package errors."""


class TntpParseError(OdassignError, ValueError):
    """Malformed TNTP text. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StructuralError(OdassignError, ValueError):
    """Input parses but describes an invalid network or demand structure."""


class ContractViolation(OdassignError, ValueError):
    """A caller broke a documented precondition (shapes, simplex, stale cache)."""


class UndefinedGapError(OdassignError, ZeroDivisionError):
    """Relative gap requested where the shortest-path total is zero."""


class DisconnectedPairError(OdassignError):
    """An OD pair has no path under the given costs."""

    def __init__(self, origin, destination):
        self.origin = origin
        self.destination = destination
        super().__init__(f"no path from node {origin} to node {destination}")


class CacheVersionError(OdassignError):
    """A persisted artifact was written by an incompatible format version."""


class CheckpointError(OdassignError):
    """A checkpoint file is missing, truncated or does not match the model."""


class ConfigError(OdassignError, ValueError):
    """Inconsistent run or environment configuration."""


class RolloutError(OdassignError):
    """A rollout worker failed; carries the worker id."""

    def __init__(self, worker, cause):
        self.worker = worker
        super().__init__(f"rollout worker {worker} failed: {cause!r}")
