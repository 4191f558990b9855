"""Exception types raised across the package."""


class PuppetMapError(Exception):
    """Base class for every error raised by puppetmap."""


class NonPositiveDepth(PuppetMapError, ValueError):
    pass


class JointLimitViolation(PuppetMapError, ValueError):
    pass


class UnknownBone(PuppetMapError, KeyError):
    pass


class ModelParseError(PuppetMapError):
    pass


class ModelValidationError(PuppetMapError):
    pass


class NoSilhouette(PuppetMapError):
    pass


class DegenerateConfiguration(PuppetMapError):
    pass


class NonConvergence(PuppetMapError):
    """Raised only on request; solvers normally return a flagged best iterate."""


class Unobservable(PuppetMapError):
    pass


class Infeasible(PuppetMapError):
    pass


class AmbiguousBlock(PuppetMapError):
    def __init__(self, windows):
        self.windows = list(windows)
        super().__init__(f"{len(self.windows)} observed 3x3 window(s) not found in pattern: {self.windows[:5]}")


class DegenerateGeometry(PuppetMapError):
    pass


class SizeMismatch(PuppetMapError, ValueError):
    pass


class TrackingLost(PuppetMapError):
    pass


class InitOutOfTolerance(PuppetMapError):
    pass


class ConfigError(PuppetMapError):
    pass
