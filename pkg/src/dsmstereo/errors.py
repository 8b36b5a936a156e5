"""Exception types raised across the toolkit."""


class DSMError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(DSMError, ValueError):
    """An input violates a value invariant (non-finite, unnormalized, negative ...)."""


class ArgumentError(DSMError, ValueError):
    """A parameter is out of its allowed range or shapes do not agree."""


class DegenerateInputError(DSMError, ValueError):
    """The input carries no usable data, e.g. a mask with zero valid pixels."""


class FormatError(DSMError, ValueError):
    """A file is malformed. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDiverged(DSMError, RuntimeError):
    """Training produced a non-finite loss; ``params`` holds the last good state."""

    def __init__(self, message, params=None, step=None):
        super().__init__(message)
        self.params = params
        self.step = step
