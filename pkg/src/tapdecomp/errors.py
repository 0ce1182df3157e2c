"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`TapError`,
split into the two families the command line maps to exit codes: input
validation (exit 1) and solver infeasibility (exit 2).
"""


class TapError(Exception):
    pass


class ValidationError(TapError, ValueError):
    """Malformed or inconsistent input."""


class ParseError(ValidationError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path


class StructuralError(ValidationError):
    """Objects that should share a node/link universe do not."""


class DomainError(ValidationError):
    """Argument outside the mathematical domain (negative flow, negative cost)."""


class UnsupportedTopologyError(ValidationError):
    pass


class MappingError(ValidationError):
    """A path cannot be expressed in the target network."""


class PartitionError(ValidationError):
    pass


class InfeasibleError(TapError):
    """Demand that cannot be routed."""


class NumericalError(TapError):
    pass


class ConsistencyError(TapError):
    """Solutions at different decomposition levels disagree."""
