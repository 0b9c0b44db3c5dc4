"""Exception types shared across the package."""


class EvosynthError(Exception):
    """Base class for all package errors."""


class ShapeError(EvosynthError, ValueError):
    """Input rejected because a tensor or layer shape does not match."""


class TrainingDiverged(EvosynthError):
    def __init__(self, epoch, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class HeredityError(EvosynthError):
    """Internal-consistency failure while encoding synaptic probabilities."""


class SynthesisFailure(EvosynthError):
    """Repair left no input-to-output path in the descendant."""


class CorruptCheckpoint(EvosynthError):
    pass


class IngestionError(EvosynthError):
    pass


class ConfigError(EvosynthError, ValueError):
    pass
