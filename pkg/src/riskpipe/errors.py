class ValidationError(ValueError):
    """Input failed a precondition (bad range, wrong shape, empty window...)."""


class ConfigError(ValueError):
    """Configuration file or override could not be applied."""
