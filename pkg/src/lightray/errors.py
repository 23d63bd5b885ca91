"""Exception hierarchy shared by all lightray modules."""


class LightrayError(Exception):
    """Base class for all errors raised by lightray."""


class BoundaryStencilError(LightrayError):
    """A finite-difference stencil left the coordinate chart."""


class RankError(LightrayError):
    """A tensor operation was called with an inadmissible rank."""


class CausalityViolationError(LightrayError):
    """kappa - |eta|^2 is not positive at some probe point."""


class TrappedRayError(LightrayError):
    """A ray did not leave the manifold within the step budget."""


class SupportError(LightrayError):
    """A field or grid does not satisfy its support requirement."""


class ResolutionError(LightrayError):
    """Sampling is too coarse for the requested inversion."""


class ZeroMeanViolationError(LightrayError):
    """A family that must integrate to zero in time does not."""


class DiscretizationError(LightrayError):
    """A discrete elliptic system turned out to be singular."""


class ConfigError(LightrayError):
    """An experiment configuration is malformed.

    ``field`` names the offending entry so the CLI can print a one-line
    diagnostic.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
