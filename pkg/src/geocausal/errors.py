"""Exception types shared across the package."""


class GeoCausalError(Exception):
    """Base class for package-specific failures."""


class OverlapViolationError(GeoCausalError):
    """An observed event has zero density under a model or intervention.

    Raised whenever a density ratio would be infinite or undefined, which
    makes the weighting estimators undiagnosable; the message names the
    offending period and event location.
    """


class RankDeficiencyError(GeoCausalError):
    """A regression design matrix is rank deficient; names the columns."""

    def __init__(self, columns, message=None):
        self.columns = list(columns)
        if message is None:
            message = "design matrix is rank deficient; collinear columns: %s" % (
                ", ".join(str(c) for c in self.columns)
            )
        super().__init__(message)


class ConvergenceError(GeoCausalError):
    """An iterative fit failed to converge; carries the iteration trace."""

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)
