"""Exception types shared across the package."""


class SemcacheError(Exception):
    """Base class for all semcache errors."""


class FormatError(SemcacheError):
    """A file does not conform to the expected binary format (bad magic,
    unsupported version, malformed header)."""


class CorruptionError(FormatError):
    """A file has a valid header but a truncated or inconsistent payload."""


class ValidationError(SemcacheError, ValueError):
    """An argument violates a documented precondition (shape mismatch,
    bad range, empty input, ...)."""


class DegenerateVectorError(ValidationError):
    """A vector has (near-)zero L2 norm and cannot be normalized or used
    for cosine similarity."""


class UnknownIdError(SemcacheError, KeyError):
    """A record id referenced by a pair is missing from the embedding sets."""


class StateError(SemcacheError, RuntimeError):
    """An operation was called in an invalid state (eviction from an empty
    cache, backward pass in eval mode, ...)."""
