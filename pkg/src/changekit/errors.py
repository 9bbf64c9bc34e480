"""Exception and warning types shared across the engine."""


class EngineError(Exception):
    """Base class for all engine errors."""


class FormatError(EngineError):
    """A serialized artifact (tensor archive, RLE, proposal line, manifest) is malformed."""


class ValidationError(EngineError):
    """Inputs are well-formed but violate an engine invariant (shape mismatch, empty mask, ...)."""


class UnresolvablePointError(EngineError):
    """A query point could not be attached to any proposal within the search radius."""


class DemodulationWarning(UserWarning):
    """Embedding grid claims to be demodulated but violates the norm/mean property."""
