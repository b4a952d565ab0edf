"""Exception hierarchy shared by every module."""


class MyoShiftError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MyoShiftError, ValueError):
    """Input data violates a precondition (too short, empty, NaN...)."""


class InvalidArgumentError(MyoShiftError, ValueError):
    """A scalar/config argument is out of its allowed range."""


class ShapeError(MyoShiftError, ValueError):
    """Array dimensions do not line up."""


class ContractError(MyoShiftError, RuntimeError):
    """A caller broke an API contract (stale cache, leaked split, ...)."""


class UnsupportedModeError(MyoShiftError, RuntimeError):
    pass


class LoadError(MyoShiftError, OSError):
    """Base for on-disk format failures."""


class MissingFileError(LoadError, FileNotFoundError):
    pass


class ChecksumError(LoadError):
    pass


class ChannelMismatchError(LoadError):
    pass


class FormatError(LoadError):
    pass
