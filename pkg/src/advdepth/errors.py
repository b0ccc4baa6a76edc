"""Exception types shared across the package."""


class AdvDepthError(Exception):
    """Base class for all package errors."""


class ShapeError(AdvDepthError, ValueError):
    pass


class ContractError(AdvDepthError, ValueError):
    """A precondition of an operation was violated."""


class BehindCameraError(ContractError):
    pass


class EmptyRegionError(AdvDepthError):
    """The projected board does not cover a single frame pixel."""


class AttackError(AdvDepthError):
    pass


class ConfigError(AdvDepthError, ValueError):
    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class FormatError(AdvDepthError, IOError):
    """Corrupt or truncated tensor dump / checkpoint."""


class VersionError(FormatError):
    pass


class NumericError(AdvDepthError, ArithmeticError):
    """A NaN or infinity showed up where a finite value is required."""
