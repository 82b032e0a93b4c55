"""Exception types shared across the room grouping engine."""


class RoomGroupError(Exception):
    """Base class for every error raised by this package."""


class MalformedDocument(RoomGroupError):
    """A document could not be parsed (syntax level)."""


class SchemaViolation(RoomGroupError):
    """A document parsed but violates its schema; the message names the offending path."""


class IoFailure(RoomGroupError):
    """An underlying file read or write failed."""


class DimensionMismatch(RoomGroupError):
    """Vector or layer dimensions do not line up."""


class BackendFailure(RoomGroupError):
    """A scorer backend failed; the message names the image or pair."""


class MissingScore(RoomGroupError):
    """A precomputed score file lacks a required pair."""


class MalformedRow(RoomGroupError):
    """A row of a score file could not be parsed."""


class OutOfRangeScore(RoomGroupError):
    """A score fell outside [0, 1]."""


class MagicMismatch(RoomGroupError):
    """A binary cache file does not start with the expected magic bytes."""


class NoConvergence(RoomGroupError):
    """An iterative solver failed to reach its tolerance within the sweep budget."""


class EmptyInventory(RoomGroupError):
    """A bed inventory was built from an empty bed-type list."""


class InventoryExhausted(RoomGroupError):
    """More bedroom groups than remaining bed-type inventory."""


class PredictorViolation(RoomGroupError):
    """A predictor answered with a string outside the offered options."""


class RemoteFailure(RoomGroupError):
    """The remote predictor could not be reached or answered malformed data."""


class LengthMismatch(RoomGroupError):
    """Two label vectors that must align have different lengths."""


class TooFewItems(RoomGroupError):
    """A metric needs more items than were provided."""


class MissingTruth(RoomGroupError):
    """Ground truth is missing for a predicted property."""


class InsufficientRooms(RoomGroupError):
    """Negative pairs were requested but no room type has two distinct rooms."""


class ConfigError(RoomGroupError):
    """Invalid or inconsistent command-line / config-file settings."""
