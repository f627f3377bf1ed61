"""Exception hierarchy."""


class IsmpcError(Exception):
    pass


class AssumptionError(IsmpcError):
    """Plant violates the origin/equilibrium requirements."""


class DomainError(IsmpcError):
    pass


class EvaluationError(IsmpcError):
    pass


class InvalidSlab(IsmpcError):
    pass


class CoverageError(IsmpcError):
    pass


class DegenerateRegion(IsmpcError):
    pass


class ShapeError(IsmpcError):
    pass


class ConditioningError(IsmpcError):
    pass


class NoFeasibleOffsets(IsmpcError):
    pass


class SynthesisFailed(IsmpcError):
    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = list(log or [])


class DivergenceError(IsmpcError):
    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory
