"""Exception types raised across the package."""


class LaplaceCortexError(Exception):
    """Base class for all data errors raised by this package."""


class InvalidArgument(LaplaceCortexError, ValueError):
    pass


class DimsMismatch(LaplaceCortexError, ValueError):
    pass


class MalformedHeader(LaplaceCortexError):
    pass


class TruncatedData(LaplaceCortexError):
    pass


class UnsupportedDtype(LaplaceCortexError):
    pass


class TooLarge(LaplaceCortexError):
    pass


class SingularSystem(LaplaceCortexError):
    pass


class TapeMismatch(LaplaceCortexError):
    pass


class EmptyDomain(LaplaceCortexError):
    pass


class EmptyMask(LaplaceCortexError):
    pass


class InvalidSegmentation(LaplaceCortexError):
    pass


class LandmarkOutsideMask(LaplaceCortexError):
    pass


class DegenerateInput(LaplaceCortexError):
    pass


class NonFiniteLoss(LaplaceCortexError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
