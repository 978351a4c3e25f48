"""Error types shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
resource or convergence problems with 3.
"""


class ConfigError(ValueError):
    """Invalid user-supplied parameters (bad degree, radius, probability...)."""


class ConstraintViolation(ConfigError):
    """A vertex address violates the canonical encoding rules."""


class IndexOutOfRange(ConfigError):
    """A vertex or edge id outside the enumerated ball."""


class GeometryError(ConfigError):
    """Requested vertices do not fit inside the ball with the required margin."""


class TooLarge(ConfigError):
    """Graph exceeds the brute-force enumeration limits."""


class RadiusTooSmall(ConfigError):
    """Ball radii too small to hold the support of an n-step walk."""


class FieldRequired(ConfigError):
    """Operation needs an external field h > 0."""


class ResourceError(RuntimeError):
    """Base class for failures that are about budgets, not inputs."""


class CapacityExceeded(ResourceError):
    """Ball construction would exceed the configured memory cap."""


class NoConvergence(ResourceError):
    """An iterative protocol exhausted its budget without bracketing."""


class DenominatorNonpositive(ResourceError):
    """A bound's denominator is not positive, so the bound is vacuous."""


class InsufficientPrecision(ResourceError):
    """Monte Carlo noise too large for the requested bias budget."""
