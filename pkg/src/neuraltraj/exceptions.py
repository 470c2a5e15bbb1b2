"""Exception types raised across the package."""


class NeuralTrajError(Exception):
    """Base class for all package errors."""


class AmbiguousFrame(NeuralTrajError):
    """Two separated same-color blobs of equal mass were found in a frame."""


class Unreachable(NeuralTrajError):
    """A task query matches nothing in the scene."""


class CorruptEpisode(NeuralTrajError):
    pass


class SchemaMismatch(NeuralTrajError):
    pass


class ShapeMismatch(NeuralTrajError, ValueError):
    pass


class EmptySource(NeuralTrajError):
    pass


class NonFinite(NeuralTrajError, FloatingPointError):
    """A NaN or Inf appeared in a forward or backward pass."""


class UnknownTarget(NeuralTrajError, KeyError):
    pass


class EmptyCorpus(NeuralTrajError):
    pass


class MissingActions(NeuralTrajError):
    pass


class TooShort(NeuralTrajError):
    pass


class IndexOutOfRange(NeuralTrajError, IndexError):
    pass


class EmptyDataset(NeuralTrajError):
    pass


class LengthMismatch(NeuralTrajError, ValueError):
    pass


class ZeroVariance(NeuralTrajError, ValueError):
    pass


class InsufficientVariants(NeuralTrajError):
    pass


class DigestMismatch(NeuralTrajError):
    pass


class StageFailure(NeuralTrajError):
    def __init__(self, stage_id, message):
        super().__init__(f"stage {stage_id!r} failed: {message}")
        self.stage_id = stage_id


class MissingOutputs(NeuralTrajError):
    pass


class ConfigError(NeuralTrajError):
    pass
