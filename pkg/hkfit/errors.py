"""
Exception hierarchy for hkfit
Every error raised on bad input derives from HKFitError and ValueError, so
callers can catch either. Solver non-convergence is not an error: it is
reported through SolveResult.converged.
"""


class HKFitError(Exception):
    """Base class for all hkfit errors"""


class DimensionMismatchError(HKFitError, ValueError):
    """Points, vectors or grids with incompatible dimensions"""


class EmptyDesignError(HKFitError, ValueError):
    """A design with no observations"""


class NonFiniteDataError(HKFitError, ValueError):
    """NaN or infinite values in data handed to a solver or estimator"""


class InvalidParameterError(HKFitError, ValueError):
    """A parameter outside its allowed range (negative V, a = b rectangles, ...)"""


class DegenerateRegressionError(HKFitError, ValueError):
    """Slope regression with fewer than two distinct regressor values"""


class InputFormatError(HKFitError, ValueError):
    """Malformed CSV or JSON input"""
