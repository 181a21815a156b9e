"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class FormatError(PipelineError):
    """A file or stream does not match its declared format."""


class DataError(PipelineError):
    """Input values are out of range, non-finite, or malformed."""


class ArityError(PipelineError):
    """Sequence lengths or element counts do not match what an operation requires."""


class ConfigError(PipelineError):
    """Invalid or mutually inconsistent configuration."""


class TrainingError(PipelineError):
    """A model cannot be trained from the given data."""


class InfeasibleError(PipelineError):
    """The requested partition or geometry cannot be constructed."""


class UndefinedMetricError(PipelineError):
    """A statistic or objective has no defined value for the given inputs."""
