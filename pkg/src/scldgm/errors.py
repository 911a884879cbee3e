"""Exception types shared across the toolkit."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class GridMismatchError(InvalidInputError):
    """Two PMFs that must share one LLR grid do not."""


class InfeasibleError(ValueError):
    """No valid object exists for the requested parameters."""


class ConstructionError(RuntimeError):
    """Random code construction failed (degree sequence or rank problems)."""


class BracketError(RuntimeError):
    """A threshold search could not establish a success/failure bracket."""


class ConsistencyError(RuntimeError):
    """Cross-validation of a computed result failed."""


class SearchFailureError(RuntimeError):
    """An optimization run found no feasible candidate."""
