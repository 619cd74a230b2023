"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inputs are structurally inconsistent (shapes, missing options, bad files)."""


class DomainError(ValueError):
    """A numeric argument is outside the domain of the operation."""


class NonCanonicalRotation(ValueError):
    """A rotation matrix has no Euler decomposition with all angles in [-pi/2, pi/2]."""
