"""Exception types shared across the package."""


class ResolutionError(ValueError):
    """A grid rank is too coarse, too fine, or inconsistent for the request."""


class ConstructionFailed(RuntimeError):
    """No candidate construction passed verification within the search limits.

    Carries the best margin report seen, so callers can tell how close the
    search came and which condition blocked it.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class FrequencyBudgetExceeded(ConstructionFailed):
    """Every admissible candidate needs frequencies above the configured cap."""


class InsufficientDepth(ValueError):
    """The block series is too shallow for the requested weight or greedy run."""


class TargetNotApproximable(RuntimeError):
    """Greedy selection found no admissible block index at some step.

    `best` holds the smallest residual norm that was achievable at the failing
    step, `step` the 1-based step number.
    """

    def __init__(self, message, step=None, best=None):
        super().__init__(message)
        self.step = step
        self.best = best


class SeriesFileError(ValueError):
    """A series or target file failed to parse or validate.

    `location` names the offending spot (file path plus a JSON-ish
    breadcrumb such as ``blocks[2].coeffs[5]``).
    """

    def __init__(self, message, location=None):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location
