"""Exception types shared across the package."""


class UnaganError(Exception):
    """Base class for all package errors."""


class InvalidInput(UnaganError):
    """An argument violates a documented precondition."""


class ShapeError(UnaganError):
    """Tensor or matrix dimensions do not match a declared contract."""


class FormatError(UnaganError):
    """An on-disk artifact is corrupt or not in the expected format."""


class CheckpointError(UnaganError):
    """A checkpoint cannot be loaded: bad container, version, or config digest."""


class TrainingDiverged(UnaganError):
    """A loss became non-finite; training state is no longer trustworthy."""
