"""Exception hierarchy shared by every vmtorus package"""
from typing import Any, List, Optional


class VMTorusError(Exception):
    """Base class for all failures raised by vmtorus."""


class GridError(VMTorusError):
    pass


class FieldError(VMTorusError):
    """Non-finite samples, malformed dumps or mismatched grids."""


class ChargeConservationError(VMTorusError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class ZeroMeanCurrentError(VMTorusError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class SteeringError(VMTorusError):
    pass


class SupportError(VMTorusError):
    """A quantity that must live inside the control set leaks outside it."""


class TrajectoryError(VMTorusError):
    pass


class GeometryError(VMTorusError):
    pass


class InfeasibleParametersError(VMTorusError):
    def __init__(self, message: str, constraint: str):
        super().__init__(f"{message} (binding constraint: {constraint})")
        self.constraint = constraint


class MomentError(VMTorusError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class ConstructionError(VMTorusError):
    pass


class HodgeObstructionError(VMTorusError):
    def __init__(self, message: str, alpha: float):
        super().__init__(message)
        self.alpha = alpha


class CensusFailure(VMTorusError):
    def __init__(self, message: str, worst: Optional[Any] = None):
        super().__init__(message)
        self.worst = worst


class ConvergenceError(VMTorusError):
    def __init__(self, message: str, history: List[float]):
        super().__init__(message)
        self.history = list(history)


class ConfigError(VMTorusError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
