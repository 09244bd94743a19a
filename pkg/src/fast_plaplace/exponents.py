import numpy as np
from enum import Enum
from typing import *
from dataclasses import dataclass

from .errors import ParameterError

## Tolerance used to decide p == p_c (and the other exponent coincidences)
P_TOL = 1e-12

@dataclass(frozen=True)
class Params:
  '''The pair (p, N) every other object is parameterized by.

  Invariants: 1 < p < 2 and N an integer >= 2.
  '''
  p: float
  N: int

  def __post_init__(self):
    if not isinstance(self.N, (int, np.integer)) or isinstance(self.N, bool):
      raise ParameterError(f"Params invariant violated: N must be an integer (got {self.N!r})")
    if self.N < 2:
      raise ParameterError(f"Params invariant violated: N >= 2 (got N={self.N})")
    if not (np.isfinite(self.p) and 1.0 < self.p < 2.0):
      raise ParameterError(f"Params invariant violated: 1 < p < 2 (got p={self.p})")
    object.__setattr__(self, "p", float(self.p))
    object.__setattr__(self, "N", int(self.N))

  @property
  def p_prime(self) -> float:
    return self.p / (self.p - 1.0)

  @property
  def q(self) -> float:
    ''' Decay exponent (p-1)/(2-p) of the stationary profile V_D. '''
    return (self.p - 1.0) / (2.0 - self.p)

  @property
  def k(self) -> float:
    return (2.0 - self.p) / self.p


class RegimeTag(Enum):
  VeryFastBelowP1 = "VeryFastBelowP1"
  MiddleP1P2 = "MiddleP1P2"
  VeryFastAboveP2 = "VeryFastAboveP2"
  CriticalPc = "CriticalPc"
  GoodPcToPM = "GoodPcToPM"
  GoodPMToPD = "GoodPMToPD"
  GoodPDto2 = "GoodPDto2"


@dataclass(frozen=True)
class Regime:
  tag: RegimeTag
  mass_conserved: bool
  diff_barenblatt_integrable: bool

  @property
  def good_range(self) -> bool:
    return self.tag in (RegimeTag.GoodPcToPM, RegimeTag.GoodPMToPD, RegimeTag.GoodPDto2)


@dataclass(frozen=True)
class ExponentTable:
  N: int
  p_c: float
  p_Y: float
  p_M: float
  p_D: float
  p_1: Optional[float] = None
  p_2: Optional[float] = None
  p: Optional[float] = None
  gamma: Optional[float] = None
  beta: Optional[float] = None
  m: Optional[float] = None
  n: Optional[float] = None
  frak_a: Optional[float] = None
  theta: Optional[float] = None
  b: Optional[float] = None
  lambda_star: Optional[float] = None
  lambda_hp: Optional[float] = None
  entropy_undefined: bool = False
  p_Y_admissible: bool = True

  def as_dict(self) -> dict:
    return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _check_dimension(N: int):
  if not isinstance(N, (int, np.integer)) or isinstance(N, bool) or N < 2:
    raise ParameterError(f"Dimension must be an integer N >= 2 (got {N!r})")

def p_c(N: int) -> float:
  return 2.0 * N / (N + 1.0)

def p_Y(N: int) -> float:
  return 2.0 * N / (N + 2.0)

def p_D(N: int) -> float:
  return (2.0 * N + 1.0) / (N + 1.0)

def p_M(N: int) -> float:
  return (3.0 * (N + 1) + np.sqrt((N + 1.0)**2 + 8.0)) / (2.0 * (N + 2.0))

def p_12(N: int) -> Tuple[Optional[float], Optional[float]]:
  ''' Roots of N(2-p)(p-1) = p; real only when N^2 - 6N + 1 >= 0, i.e. N >= 6. '''
  disc = N * N - 6.0 * N + 1.0
  if disc < 0:
    return None, None
  mid, half = 1.5 - 1.0 / (2.0 * N), np.sqrt(disc) / (2.0 * N)
  return mid - half, mid + half

def critical_exponents(N: int) -> ExponentTable:
  """Critical exponents p_c, p_Y, p_M, p_D (and p_1, p_2 when N >= 6) for dimension N."""
  _check_dimension(N)
  p1, p2 = p_12(N)
  return ExponentTable(N=int(N), p_c=p_c(N), p_Y=p_Y(N), p_M=p_M(N), p_D=p_D(N), p_1=p1, p_2=p2, p_Y_admissible=p_Y(N) > 1.0)

def is_critical(params: Params) -> bool:
  return abs(params.p - p_c(params.N)) <= P_TOL

def integrability_flag(p: float, N: int) -> bool:
  ''' True iff V_{D1} - V_{D2} is integrable on R^N, i.e. N(2-p)(p-1) < p. '''
  return N * (2.0 - p) * (p - 1.0) < p

def gamma(p: float) -> float:
  return (2.0 * p - 3.0) / (p - 1.0)

def beta(params: Params) -> float:
  ## Signed infinity at p_c, sign of the limit p -> p_c^+
  if is_critical(params):
    return np.inf
  p, N = params.p, params.N
  return 1.0 / (p - N * (2.0 - p))

def fde_parameters(params: Params) -> Tuple[float, float, float]:
  ''' (m, n, frak_a) of the weighted fast-diffusion equation the radial transform maps to. '''
  p, N = params.p, params.N
  m = p - 1.0
  n = 2.0 + 2.0 * N / params.p_prime
  return m, n, N - n

def theta(params: Params) -> float:
  if is_critical(params):
    return np.inf
  m, n, _ = fde_parameters(params)
  return 1.0 / (2.0 - n * (1.0 - m))

def derived_constants(params: Params) -> ExponentTable:
  """gamma, beta, m, n, frak_a and theta for (p, N), on top of the exponent table."""
  table = critical_exponents(params.N)
  m, n, a = fde_parameters(params)
  g = gamma(params.p)
  return ExponentTable(
    **{k: getattr(table, k) for k in ("N", "p_c", "p_Y", "p_M", "p_D", "p_1", "p_2", "p_Y_admissible")},
    p=params.p, gamma=g, beta=beta(params), m=m, n=n, frak_a=a, theta=theta(params),
    b=2.0 * m / (m + 1.0), entropy_undefined=abs(params.p - 1.5) <= P_TOL
  )

def classify_regime(params: Params) -> Regime:
  p, N = params.p, params.N
  pc = p_c(N)
  p1, p2 = p_12(N)
  if is_critical(params):
    tag = RegimeTag.CriticalPc
  elif p < pc:
    if p1 is None or p > p2:
      tag = RegimeTag.VeryFastAboveP2
    elif p < p1:
      tag = RegimeTag.VeryFastBelowP1
    else:
      tag = RegimeTag.MiddleP1P2
  elif p <= p_M(N):
    tag = RegimeTag.GoodPcToPM
  elif p < p_D(N):
    tag = RegimeTag.GoodPMToPD
  else:
    tag = RegimeTag.GoodPDto2
  mass_conserved = tag == RegimeTag.CriticalPc or p > pc
  return Regime(tag=tag, mass_conserved=mass_conserved, diff_barenblatt_integrable=integrability_flag(p, N))

def _require_good_range(params: Params, what: str):
  if is_critical(params) or params.p < p_c(params.N):
    raise ParameterError(f"{what} is only defined for p_c < p < 2 (got p={params.p}, p_c={p_c(params.N)})")

def lambda_star(params: Params) -> float:
  """Optimal entropy decay rate in the good fast diffusion range."""
  _require_good_range(params, "lambda_star")
  p, N = params.p, params.N
  if p > p_M(N):
    return p - N * (2.0 - p)
  return (p - N * (2.0 - p) * (p - 1.0))**2 / (4.0 * p * (p - 1.0) * (2.0 - p))

def lambda_hp(params: Params) -> float:
  """Optimal Hardy-Poincare constant Lambda, related to lambda_star by (2-p)^2 Lambda/(p-1)."""
  _require_good_range(params, "lambda_hp")
  p, N = params.p, params.N
  if p > p_M(N):
    return (p - 1.0) * (p - N * (2.0 - p)) / (2.0 - p)**2
  return (p - N * (2.0 - p) * (p - 1.0))**2 / (4.0 * p * (2.0 - p)**3)

def lambda_hp_radial(params: Params) -> float:
  ''' Optimal constant of the radial weighted problem written in the variable s (see spectra). '''
  return 4.0 * (2.0 - params.p) * lambda_hp(params) / params.p

def lambda_ess(m: float, n: float) -> float:
  if not (0.0 < m < 1.0) or not n > 2.0:
    raise ParameterError(f"lambda_ess needs 0 < m < 1 and n > 2 (got m={m}, n={n})")
  return ((n - 2.0) * (1.0 - m) - 2.0)**2 / (4.0 * (1.0 - m)**2)

def exponent_table(params: Params) -> ExponentTable:
  ''' The full table for (p, N): exponents, derived constants and, in the good range, the rates. '''
  table = derived_constants(params)
  ls, lh = None, None
  if classify_regime(params).good_range:
    ls, lh = lambda_star(params), lambda_hp(params)
  return ExponentTable(**{**table.as_dict(), "lambda_star": ls, "lambda_hp": lh})

def exponent_atlas(N: int) -> List[Tuple[str, float]]:
  ''' The labelled landmarks {1, p_1, 3/2, p_Y, p_2, p_c, p_M, p_D, 2} in increasing order. '''
  t = critical_exponents(N)
  marks = [("1", 1.0), ("3/2", 1.5), ("p_Y", t.p_Y), ("p_c", t.p_c), ("p_M", t.p_M), ("p_D", t.p_D), ("2", 2.0)]
  if t.p_1 is not None:
    marks += [("p_1", t.p_1), ("p_2", t.p_2)]
  return sorted(marks, key=lambda x: x[1])
