"""Exception hierarchy shared by all modules."""


class LRDError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(LRDError, ValueError):
    pass


class NumericError(LRDError, ArithmeticError):
    """Non-finite input or a failed factorization."""


class DegenerateWarpError(LRDError):
    """A warped image is identically zero (the frame was mapped outside the image)."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"warped image {index} has zero norm")


class InvalidUpdateError(LRDError):
    """A parameter update produced a non-invertible transform."""


class DisconnectedManifoldError(LRDError):
    """A sample cannot reach K other samples through the neighbourhood graph."""


class DivergenceError(LRDError, ArithmeticError):
    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite iterate at inner iteration {iteration}")


class IllConditionedJacobianError(LRDError):
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"Jacobian of image {index} is rank deficient")


class DegenerateSynthesisError(LRDError):
    pass


class FormatError(LRDError, IOError):
    """Malformed, truncated or version-mismatched file."""
