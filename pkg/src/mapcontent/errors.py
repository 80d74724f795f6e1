"""Exception types shared by all modules."""


class MapContentError(Exception):
    """Base class for errors raised by this package."""


class ArgumentError(MapContentError, ValueError):
    """An argument is outside its documented domain."""


class DepthError(MapContentError):
    """A cube operation would go below the lattice depth."""


class ResolutionError(MapContentError):
    """The lattice is too coarse for the requested object."""


class StateError(MapContentError):
    """An operation was called before its precondition was established."""


class NotBiLipschitzError(MapContentError):
    """A two-sided Lipschitz pre-check failed.

    ``worst_pair`` holds the lattice indices of the most distorted pair and
    ``ratio`` its distortion.
    """

    def __init__(self, message, worst_pair=None, ratio=None):
        super().__init__(message)
        self.worst_pair = worst_pair
        self.ratio = ratio


class FailureReport(MapContentError):
    """The chosen parameter schedule is insufficient for this map.

    Not a bug: the pipeline reports which stage gave up and the measured
    quantities that made it give up.
    """

    def __init__(self, stage, message, details=None):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.details = dict(details or {})

    def to_dict(self):
        return {"stage": self.stage, "message": str(self), "details": self.details}
