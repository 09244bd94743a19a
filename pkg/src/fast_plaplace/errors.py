from typing import *


class LabError(Exception):
  """Base class for every error raised by fast_plaplace."""


class ParameterError(LabError, ValueError):
  """A precondition on (p, N), a profile kind, or a numerical option was violated."""


class EntropyUndefined(ParameterError):
  """gamma = 0 (p = 3/2): the relative entropy is not defined."""


class SpecValidationError(ParameterError):
  def __init__(self, field: str, message: str):
    self.field = field
    super().__init__(f"{field}: {message}")


class NonIntegrableTail(LabError):
  def __init__(self, power: float, threshold: float, what: str = "integrand"):
    self.power = power
    self.threshold = threshold
    super().__init__(f"Non-integrable tail of {what}: fitted decay power {power:.4f}, integrability needs > {threshold:.4f}")


class SolverError(LabError):
  ## Carries whatever was computed before the failure
  def __init__(self, message: str, trajectory: Any = None):
    self.trajectory = trajectory
    super().__init__(message)
