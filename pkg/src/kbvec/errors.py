"""Exception hierarchy shared by all modules."""


class KbvecError(Exception):
    """Base class for every error raised deliberately by this package."""


class FormatError(KbvecError, ValueError):
    """Malformed input file or string."""


class ConsistencyError(KbvecError, ValueError):
    """Input that parses but contradicts itself (e.g. one code, two owners)."""


class ConfigError(KbvecError, ValueError):
    """Invalid configuration value or an unusable data setup."""


class CheckpointError(FormatError):
    """Checkpoint has the wrong magic, is truncated or has trailing bytes."""


class UndefinedSimilarityError(KbvecError, ValueError):
    pass


class UndefinedCorrelationError(KbvecError, ValueError):
    pass


class TrainingDivergedError(KbvecError, RuntimeError):
    """Raised when a training step produces a non-finite loss."""
