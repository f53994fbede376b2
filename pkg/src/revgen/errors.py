"""Exception types raised across the package."""


class RevGenError(Exception):
    """Base class for all package errors."""


# -- validation / contract violations ---------------------------------------

class DimensionMismatchError(RevGenError, ValueError):
    pass


class KindMismatchError(RevGenError, ValueError):
    pass


class NonNormalizedError(RevGenError, ValueError):
    pass


class NegativeProbabilityError(RevGenError, ValueError):
    pass


class SingularCovarianceError(RevGenError, ValueError):
    pass


class ModeOutOfRangeError(RevGenError, ValueError):
    pass


class LatticeTooLargeError(RevGenError, ValueError):
    pass


class LayoutMismatchError(RevGenError, ValueError):
    pass


class TapeMismatchError(RevGenError, ValueError):
    pass


class EmptyBatchError(RevGenError, ValueError):
    pass


class AsymmetricKernelError(RevGenError, ValueError):
    pass


class SizeMismatchError(RevGenError, ValueError):
    pass


class GridMismatchError(RevGenError, ValueError):
    pass


class TooFewSamplesError(RevGenError, ValueError):
    pass


class EmptyError(RevGenError, ValueError):
    pass


class ConfigInvalidError(RevGenError, ValueError):
    """Config failed schema validation; message lists one error per line."""


# -- numerical / runtime failures --------------------------------------------

class QuadratureNotConvergedError(RevGenError, RuntimeError):
    pass


class NonFiniteError(RevGenError, RuntimeError):
    pass


class NonFiniteGradientError(RevGenError, RuntimeError):
    pass


class NonFiniteLossError(RevGenError, RuntimeError):
    pass


class RejectionStallError(RevGenError, RuntimeError):
    pass


class CheckpointCorruptError(RevGenError, RuntimeError):
    pass
