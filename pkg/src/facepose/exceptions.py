"""Exception types shared across the package."""


class DegenerateMatrixError(ValueError):
    """Matrix has numerical rank < 2, so the nearest rotation is not unique."""


class TensorStateError(RuntimeError):
    """Grid tensor is in the wrong activation state for the requested op."""


class UndefinedMetricError(ValueError):
    """Metric has no defined value for the given inputs (e.g. no matches)."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where the computation cannot continue."""
