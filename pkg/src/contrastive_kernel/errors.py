"""Exception hierarchy shared across the package."""


class ContrastiveKernelError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ContrastiveKernelError, ValueError):
    pass


class InvalidConfigError(ContrastiveKernelError, ValueError):
    pass


class UnsupportedError(ContrastiveKernelError, NotImplementedError):
    pass


class DegenerateContrastError(ContrastiveKernelError, ValueError):
    pass


class TrainingDivergedError(ContrastiveKernelError, RuntimeError):
    pass


class ConstructionError(ContrastiveKernelError, ValueError):
    pass


class SupportViolationError(ContrastiveKernelError, ValueError):
    pass
