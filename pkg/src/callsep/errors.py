"""Exception types raised by the toolkit.

Every error that callers are expected to handle programmatically gets its
own class; generic misuse keeps raising ValueError/TypeError.
"""


class CallsepError(Exception):
    """Base class for toolkit-specific errors."""


class AudioFormatError(CallsepError):
    """File could not be decoded as audio."""


class ChannelCountError(AudioFormatError):
    """Recording does not have exactly two channels."""


class AlignmentError(CallsepError):
    """Signals that must be aligned differ in length or sample rate."""


class InsufficientGroupsError(CallsepError):
    """Too few distinct speaker groups to build a three-way split."""


class EmptySplitError(CallsepError):
    """A split that must contain samples is empty."""


class TooShortError(CallsepError):
    """Input signal shorter than the minimum the operation supports."""


class ShapeError(CallsepError):
    """Tensor shapes inconsistent with the separator configuration."""


class CheckpointMismatchError(CallsepError):
    """Checkpoint tensors incompatible with the target model.

    ``tensors`` lists the offending parameter names.
    """

    def __init__(self, message, tensors=()):
        super().__init__(message)
        self.tensors = list(tensors)


class UndefinedReferenceError(CallsepError):
    """Reference signal is identically zero after zero-meaning."""


class RankDeficiencyError(CallsepError):
    """Reference signals are collinear; projection is ill-defined."""


class DimensionError(CallsepError):
    """Embedding vectors of different dimension were compared."""


class BackendMissingError(CallsepError):
    """Requested embedding backend is not available in this environment."""


class BackendLengthError(CallsepError):
    """Audio shorter than the embedding backend's receptive length."""


class MissingReferenceError(CallsepError):
    """Channel assignment attempted before reference clips were registered."""


class DivergenceError(CallsepError):
    """Training loss became non-finite."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
