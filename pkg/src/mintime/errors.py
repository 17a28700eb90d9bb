"""Exception types shared across the toolkit."""


class MintimeError(Exception):
    """Base class for all toolkit errors."""


class ZeroCostateError(MintimeError):
    """A velocity/gradient selection was requested at p = 0."""


class OffBoundaryError(MintimeError):
    """A point expected on the target boundary is not within tolerance."""


class DegenerateGradientError(MintimeError):
    """The target gradient vanishes where a normal direction is needed."""


class ProjectionError(MintimeError):
    """Newton projection onto the target boundary failed to converge."""


class CostateBlowupError(MintimeError):
    """The costate norm left the admissible range during integration."""


class ControllabilityError(MintimeError):
    """Sampled H(x, xi) is negative on the target boundary (0 not in F(x))."""


class CapExceededError(MintimeError):
    """No certificate constant below the cap satisfies the sampled inequality."""

    def __init__(self, message, max_ratio=None):
        super().__init__(message)
        self.max_ratio = max_ratio


class ScenarioError(MintimeError):
    """Scenario file failed validation (unknown key, bad value, missing field)."""


class ConvergenceError(MintimeError):
    """Iterative solve stopped before reaching the tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
