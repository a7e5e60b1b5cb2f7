class AmtlError(ValueError):
    """Base class for every contract violation raised by this package."""


class ShapeError(AmtlError):
    pass


class UnknownPrimitiveError(AmtlError):
    pass


class CtcInfeasibleError(AmtlError):
    pass


class CheckpointError(AmtlError):
    pass


class ConfigError(AmtlError):
    pass


class ManifestError(AmtlError):
    pass


class AudioError(AmtlError):
    pass


class NonFiniteGradientError(AmtlError):
    pass
