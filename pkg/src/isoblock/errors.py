"""Exception types shared across modules; the CLI maps them to exit codes."""


class InvalidGraphError(ValueError):
    """Cyclic graph, bad vertex ids or a set that is not closed as claimed."""


class CapacityError(RuntimeError):
    """An exhaustive enumeration was requested beyond its size guard."""


class ConsistencyError(RuntimeError):
    """Two computations that must agree mathematically did not."""


class SearchExhausted(RuntimeError):
    """A randomized search used its whole budget without finding a witness."""
