"""Exception hierarchy shared by all subpackages."""


class LevyBSDEError(Exception):
    """Base class for library errors."""


class ConfigError(LevyBSDEError):
    """Malformed or inconsistent experiment configuration."""


class QuadratureDivergence(LevyBSDEError):
    pass


class DegenerateMeasure(LevyBSDEError):
    pass


class NoBalancePoint(LevyBSDEError):
    pass


class BisectionStall(LevyBSDEError):
    pass


class EmptyBin(LevyBSDEError):
    pass


class ZeroJumpViolated(LevyBSDEError):
    pass


class NegativeVariance(LevyBSDEError):
    pass


class InfeasibleRebalance(LevyBSDEError):
    pass


class SupportMismatch(LevyBSDEError):
    pass


class ContractionViolation(LevyBSDEError, ValueError):
    """K * delta >= 1: the implicit step is not a contraction."""


class StateExplosion(LevyBSDEError):
    pass


class FixedPointStall(LevyBSDEError):
    pass


class NonConvergence(LevyBSDEError):
    pass


class TreeTooLarge(LevyBSDEError):
    pass


class NoSampler(LevyBSDEError):
    pass
