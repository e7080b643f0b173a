"""Exception types shared across the package."""


class ForgettingError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ForgettingError, ValueError):
    pass


class NumericError(ForgettingError, ArithmeticError):
    pass


class PreconditionError(ForgettingError, ValueError):
    pass


class ConfigError(ForgettingError, ValueError):
    pass


class StateError(ForgettingError, RuntimeError):
    pass


class DataError(ForgettingError, ValueError):
    pass


class FormatError(DataError):
    """Malformed on-disk data (CIFAR binaries, tensor containers)."""


class CompatibilityError(ForgettingError, ValueError):
    """Snapshot or feature fingerprint does not match its target."""


class ProbeError(ForgettingError, ValueError):
    pass
