"""Exception hierarchy shared across the capow package."""


class CapowError(Exception):
    """Base class for all capow-specific errors."""


class SchemaError(CapowError):
    """Input does not match the declared schema (missing column, bad dimension)."""


class CorruptLogError(CapowError):
    """Activity log is systemically corrupt (more than half the rows malformed)."""


class EmptyTrainingSetError(CapowError):
    """A model was asked to train on zero usable records."""


class DegenerateModelError(CapowError):
    """Training produced a model that cannot discriminate (e.g. identical centroids)."""


class ConfigError(CapowError):
    """Invalid policy, scenario, or model configuration."""


class ProtocolError(CapowError):
    """Malformed or unexpected wire message."""


class SolveTimeout(CapowError):
    """Puzzle solver hit its caller-supplied deadline before finding a solution."""
