"""Exception types shared across the pipeline stages."""


class NotTrainedError(RuntimeError):
    """A stage was used before its model was trained or loaded."""


class ConfigError(ValueError):
    """Inconsistent or missing configuration."""


class TrainingDivergedError(RuntimeError):
    """A loss became non-finite; the message carries the stage, epoch and step."""
