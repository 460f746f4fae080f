"""Exception hierarchy shared by every bnn-evolve module."""


class BnnError(Exception):
    """Base class for all errors raised by bnn-evolve."""


class DimensionError(BnnError, ValueError):
    """Two bit carriers (vectors, rows, layers, masks) disagree on their shape."""


class EmptyInputError(BnnError, ValueError):
    """An operation that needs at least one element received none."""


class ConfigError(BnnError, ValueError):
    """Invalid run configuration: unknown key, bad value or missing field."""


# Network file ("BNNV1") errors


class ModelFormatError(BnnError, ValueError):
    """The byte stream is not a well-formed network file."""


class BadMagicError(ModelFormatError):
    pass


class TruncatedStreamError(ModelFormatError):
    pass


class SizeOverflowError(ModelFormatError):
    """Declared depth or layer sizes are zero or exceed the supported limits."""


# IDX (MNIST) errors


class IdxFormatError(BnnError, ValueError):
    """The byte stream is not a well-formed IDX file."""


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxTrailingDataError(IdxFormatError):
    pass


class LabelRangeError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    """Image and label files of one split hold different item counts."""
