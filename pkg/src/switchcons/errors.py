"""Exception hierarchy shared by all modules."""


class ConsensusError(Exception):
    """Base class for every error raised by switchcons."""


class DimensionError(ConsensusError, ValueError):
    """Matrix shapes do not conform."""


class NumericFailure(ConsensusError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy result."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularMatrixError(NumericFailure):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class DefectiveMatrixError(ConsensusError):
    """The agent matrix is not diagonalizable and no Jordan basis was given."""


class ModalFormError(ConsensusError):
    """A user supplied transformation does not reduce A to diagonal/Jordan form."""


class InfeasibleGainError(ConsensusError):
    """No finite gain satisfies the consensus condition (e.g. disconnected graph)."""


class NotApplicableError(ConsensusError):
    """The requested construction does not apply to the given data."""


class ScheduleError(ConsensusError, ValueError):
    pass


class DivergenceError(NumericFailure):
    """Integration produced a non-finite or exploding state."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ConfigError(ConsensusError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
