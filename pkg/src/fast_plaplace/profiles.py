import logging
import numpy as np
from typing import *
from collections import namedtuple
from dataclasses import dataclass
from functools import lru_cache
from numpy.typing import ArrayLike
from scipy.optimize import bisect
from scipy.special import beta as beta_fn

from .errors import LabError, ParameterError
from .exponents import Params, beta, is_critical, p_c, _require_good_range
from .stencils import omega, quad_radial, radial_integral, radial_derivative, cumulative_tail_integral

logger = logging.getLogger(__name__)

## Frames of a radial profile: original time t or rescaled time tau
@dataclass(frozen=True)
class Original:
  t: float

  @property
  def time(self) -> float:
    return self.t

@dataclass(frozen=True)
class SelfSimilar:
  tau: float

  @property
  def time(self) -> float:
    return self.tau

Frame = Union[Original, SelfSimilar]

## Barenblatt kinds
@dataclass(frozen=True)
class MassParam:
  M: float

@dataclass(frozen=True)
class FreeParam:
  D: float
  T: float

@dataclass(frozen=True)
class Stationary:
  D: float

MassRescaled = namedtuple("MassRescaled", ["u", "lam", "time_factor"])
SandwichFlags = namedtuple("SandwichFlags", ["lower", "upper", "derivative", "max_violation"])


@dataclass(frozen=True)
class RadialGridFunction:
  '''
  Nonnegative radial profile sampled on a grid 0 = r_0 < r_1 < ... < r_K, tagged with its frame.

  'derivative' optionally carries the exact radial derivative of a closed-form profile.
  '''
  grid: np.ndarray
  values: np.ndarray
  frame: Frame
  params: Params
  derivative: Optional[np.ndarray] = None

  def __post_init__(self):
    r = np.array(self.grid, dtype=float)
    u = np.array(self.values, dtype=float)
    if r.ndim != 1 or r.shape != u.shape:
      raise ParameterError("grid and values must be 1-d arrays of equal length")
    if r[0] != 0.0 or np.any(np.diff(r) <= 0):
      raise ParameterError("grid must start at 0 and increase strictly")
    if not np.all(np.isfinite(u)) or np.any(u < 0):
      raise ParameterError("values must be finite and nonnegative")
    if self.frame.time < 0:
      raise ParameterError(f"frame time must be nonnegative (got {self.frame.time})")
    r.flags.writeable, u.flags.writeable = False, False
    object.__setattr__(self, "grid", r)
    object.__setattr__(self, "values", u)
    if self.derivative is not None:
      du = np.array(self.derivative, dtype=float)
      du.flags.writeable = False
      object.__setattr__(self, "derivative", du)

  def __len__(self) -> int:
    return len(self.grid)

  def radial_derivative(self) -> np.ndarray:
    return self.derivative if self.derivative is not None else radial_derivative(self.grid, self.values)

  def with_values(self, values: ArrayLike, frame: Optional[Frame] = None) -> "RadialGridFunction":
    return RadialGridFunction(self.grid, values, self.frame if frame is None else frame, self.params)


@dataclass(frozen=True)
class BarenblattSpec:
  params: Params
  kind: Union[MassParam, FreeParam, Stationary]
  ell: float = 1.0

  def __post_init__(self):
    p, pc = self.params.p, p_c(self.params.N)
    crit = is_critical(self.params)
    if not self.ell > 0:
      raise ParameterError(f"ell must be positive (got {self.ell})")
    if isinstance(self.kind, MassParam):
      if not self.kind.M > 0:
        raise ParameterError(f"mass must be positive (got {self.kind.M})")
      if p < pc and not crit:
        raise ParameterError(f"MassParam Barenblatt needs p >= p_c (p={p}, p_c={pc})")
    elif isinstance(self.kind, FreeParam):
      if not (self.kind.D > 0 and self.kind.T > 0):
        raise ParameterError("FreeParam needs D > 0 and T > 0")
      if p > pc and not crit:
        raise ParameterError(f"FreeParam (pseudo-)Barenblatt needs p <= p_c (p={p}, p_c={pc})")
    elif isinstance(self.kind, Stationary):
      if not self.kind.D > 0:
        raise ParameterError(f"D must be positive (got {self.kind.D})")
    else:
      raise ParameterError(f"Unknown Barenblatt kind {self.kind!r}")

  def frame_map(self) -> "FrameMap":
    if isinstance(self.kind, FreeParam):
      return FrameMap(self.params, self.kind.T, self.ell)
    return FrameMap(self.params, beta(self.params) if not is_critical(self.params) else 1.0, self.ell)

  @property
  def D(self) -> float:
    return D_of_mass(self.params, self.kind.M) if isinstance(self.kind, MassParam) else self.kind.D


@dataclass(frozen=True)
class FrameMap:
  """
  The scale R_T(t) of the self-similar change of variables v(tau, y) = R_T(t)^N u(t, R_T(t) y).

  R_T(t) = ((t+T)/beta)^beta for p_c < p < 2, ((T-t)/|beta|)^beta on [0, T) for p < p_c and
  exp(ell (T+t)) at p = p_c; tau = ln(R_T(t)/R_T(0)).
  """
  params: Params
  T: float
  ell: float = 1.0

  def __post_init__(self):
    if not (self.T > 0 and self.ell > 0):
      raise ParameterError(f"FrameMap needs T > 0 and ell > 0 (got T={self.T}, ell={self.ell})")
    if is_critical(self.params) and self.ell != 1.0:
      logger.warning(f"ell={self.ell} != 1 at p = p_c: the frame change is exact but the pseudo-Barenblatt is no longer a solution")

  @property
  def regime(self) -> str:
    if is_critical(self.params):
      return "critical"
    return "good" if self.params.p > p_c(self.params.N) else "very_fast"

  def _check(self, t: ArrayLike):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
      raise ParameterError("FrameMap is defined for t >= 0")
    if self.regime == "very_fast" and np.any(t >= self.T):
      raise ParameterError(f"t must stay below the extinction time T={self.T}")
    return t

  def R(self, t: ArrayLike) -> ArrayLike:
    t = self._check(t)
    if self.regime == "critical":
      return np.exp(self.ell * (self.T + t))
    b = beta(self.params)
    if self.regime == "good":
      return ((t + self.T) / b)**b
    return ((self.T - t) / abs(b))**b

  def log_rate(self, t: ArrayLike) -> ArrayLike:
    ''' R_T'(t)/R_T(t), the drift speed in the profile-matching boundary condition. '''
    t = self._check(t)
    if self.regime == "critical":
      return self.ell * np.ones_like(t)
    b = beta(self.params)
    return b / (t + self.T) if self.regime == "good" else abs(b) / (self.T - t)

  def tau(self, t: ArrayLike) -> ArrayLike:
    t = self._check(t)
    if self.regime == "critical":
      return self.ell * t
    b = beta(self.params)
    if self.regime == "good":
      return b * np.log1p(t / self.T)
    return b * np.log1p(-t / self.T)

  def time_of_tau(self, tau: ArrayLike) -> ArrayLike:
    tau = np.asarray(tau, dtype=float)
    if self.regime == "critical":
      return tau / self.ell
    b = beta(self.params)
    if self.regime == "good":
      return self.T * np.expm1(tau / b)
    return -self.T * np.expm1(tau / b)


## ---- constants of the stationary profile ----

def b2(params: Params) -> float:
  _require_good_range(params, "b2")
  p, N = params.p, params.N
  return params.k * (p - N * (2.0 - p))**(-1.0 / (p - 1.0))

def _normalization(params: Params, b_1: float, method: str) -> float:
  p = params.p
  c, q = b2(params), params.q
  fn = lambda r: (b_1 + c * r**params.p_prime)**(-q)
  return quad_radial(fn, params.N, method=method, decay=p / (2.0 - p))

@lru_cache(maxsize=256)
def b1(params: Params, method: str = "split") -> float:
  '''
  Unique b_1 > 0 such that (b_1 + b_2 |x|^{p'})^{-(p-1)/(2-p)} has unit mass.

  The normalization integral is strictly decreasing in b_1; the root is bracketed by geometric
  expansion and found by bisection in log b_1.
  '''
  _require_good_range(params, "b1")
  f = lambda x: _normalization(params, np.exp(x), method) - 1.0
  lo, hi = 0.0, 0.0
  for _ in range(200):
    if f(lo) > 0:
      break
    lo -= 1.0
  else:
    raise LabError("b1: failed to bracket the root from below")
  for _ in range(200):
    if f(hi) < 0:
      break
    hi += 1.0
  else:
    raise LabError("b1: failed to bracket the root from above")
  x = bisect(f, lo, hi, xtol=1e-13, maxiter=400)
  return float(np.exp(x))

def b1_closed_form(params: Params) -> float:
  ''' b_1 from the Beta-function form of the normalization integral. '''
  _require_good_range(params, "b1_closed_form")
  N, pp, q = params.N, params.p_prime, params.q
  B = beta_fn(N / pp, q - N / pp) / pp
  return (b2(params)**(N / pp) / (omega(N) * B))**(1.0 / (N / pp - q))

def m_star(params: Params) -> float:
  ''' Mass of the stationary profile V_1. '''
  p, N = params.p, params.N
  bt = beta(params)
  _require_good_range(params, "m_star")
  return bt**(N / p) * b1(params)**((p - 1.0) / (bt * p * (2.0 - p)))

def D_of_mass(params: Params, M: float) -> float:
  _require_good_range(params, "D_of_mass")
  if not M > 0:
    raise ParameterError(f"mass must be positive (got {M})")
  p, N = params.p, params.N
  bt = beta(params)
  return bt**(N * bt * (2.0 - p) / (p - 1.0)) * b1(params) * M**(-p * bt * (2.0 - p) / (p - 1.0))

def mass_of_D(params: Params, D: float) -> float:
  _require_good_range(params, "mass_of_D")
  if not D > 0:
    raise ParameterError(f"D must be positive (got {D})")
  p, N = params.p, params.N
  bt = beta(params)
  return (bt**(N * bt * (2.0 - p) / (p - 1.0)) * b1(params) / D)**((p - 1.0) / (p * bt * (2.0 - p)))


## ---- closed-form profiles ----

def eval_VD(D: float, r: ArrayLike, params: Params) -> Tuple[ArrayLike, ArrayLike]:
  """
  Stationary profile V_D(r) = (D + (2-p)/p r^{p'})^{-(p-1)/(2-p)} and its radial derivative
  -r^{1/(p-1)} V_D^{1/(p-1)}.
  """
  if not D > 0:
    raise ParameterError(f"D must be positive (got {D})")
  p = params.p
  r = np.asarray(r, dtype=float)
  V = (D + params.k * r**params.p_prime)**(-params.q)
  dV = -r**(1.0 / (p - 1.0)) * V**(1.0 / (p - 1.0))
  return V, dV

def log_VD(D: float, r: ArrayLike, params: Params) -> ArrayLike:
  ''' ln V_D(r), accurate far in the tail. '''
  r = np.asarray(r, dtype=float)
  return -params.q * np.log(D + params.k * r**params.p_prime)

def eval_barenblatt(spec: BarenblattSpec, t: ArrayLike, r: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
  '''
  Value and radial derivative of R(t)^{-N} V_D(r/R(t)).

  MassParam uses R = (t/beta)^beta (the Barenblatt with a Dirac of mass M at t = 0), FreeParam the
  pseudo-Barenblatt scale R_T of its FrameMap, and Stationary returns V_D for every t.
  '''
  params, N = spec.params, spec.params.N
  kind = spec.kind
  if isinstance(kind, Stationary):
    return eval_VD(kind.D, r, params)
  if isinstance(kind, MassParam):
    if is_critical(params):
      raise ParameterError("The mass-parameterized Barenblatt has no closed form at p = p_c")
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
      raise ParameterError("The Barenblatt solution is evaluated at t > 0")
    bt = beta(params)
    R = (t / bt)**bt
  else:
    R = spec.frame_map().R(t)
  V, dV = eval_VD(spec.D, np.asarray(r) / R, params)
  return R**(-N) * V, R**(-N - 1.0) * dV

def barenblatt_grid(spec: BarenblattSpec, t: float, r: np.ndarray, frame_time: Optional[float] = None) -> RadialGridFunction:
  ''' Samples eval_barenblatt at time t; the frame is stamped with 'frame_time' (defaults to t). '''
  u, du = eval_barenblatt(spec, t, r)
  stamp = t if frame_time is None else frame_time
  frame = SelfSimilar(0.0) if isinstance(spec.kind, Stationary) and frame_time is None else Original(stamp)
  return RadialGridFunction(r, u, frame, spec.params, derivative=du)

def stationary_grid(D: float, params: Params, r: np.ndarray, tau: float = 0.0) -> RadialGridFunction:
  V, dV = eval_VD(D, r, params)
  return RadialGridFunction(r, V, SelfSimilar(tau), params, derivative=dV)


## ---- integrals of grid functions ----

def mass(f: RadialGridFunction, weight_power: float = 0.0) -> float:
  """
  omega_N int f(r) r^{N-1-weight_power} dr, completed past the grid with the fitted power tail.

  weight_power = N - n gives the weighted mass of the fast-diffusion side.
  """
  return radial_integral(f.grid, f.values, f.params.N, weight_power, tail="fit", what="mass integrand")

def xp_norm(f: RadialGridFunction) -> float:
  ''' sup_R R^{p/(2-p) - N} int_{|x| >= R} f over the grid radii; np.inf when the tail is not integrable. '''
  p, N = f.params.p, f.params.N
  r = f.grid
  F = f.values * r**(N - 1.0)
  tails = omega(N) * cumulative_tail_integral(r, F)
  if not np.all(np.isfinite(tails[1:])):
    logger.info("xp_norm: the tail of f is not integrable")
    return np.inf
  return float(np.max(r[1:]**(p / (2.0 - p) - N) * tails[1:]))


## ---- changes of frame ----

def to_selfsimilar(u: RadialGridFunction, fmap: FrameMap) -> RadialGridFunction:
  ''' v(tau, y) = R_T(t)^N u(t, R_T(t) y) on the remapped grid y = r / R_T(t). '''
  if not isinstance(u.frame, Original):
    raise ParameterError("to_selfsimilar expects a function in the Original frame")
  t = u.frame.t
  R = float(fmap.R(t))
  N = u.params.N
  du = None if u.derivative is None else R**(N + 1.0) * u.derivative
  return RadialGridFunction(u.grid / R, R**N * u.values, SelfSimilar(float(fmap.tau(t))), u.params, derivative=du)

def from_selfsimilar(v: RadialGridFunction, fmap: FrameMap) -> RadialGridFunction:
  if not isinstance(v.frame, SelfSimilar):
    raise ParameterError("from_selfsimilar expects a function in the SelfSimilar frame")
  t = float(fmap.time_of_tau(v.frame.tau))
  R = float(fmap.R(t))
  N = v.params.N
  du = None if v.derivative is None else R**(-N - 1.0) * v.derivative
  return RadialGridFunction(v.grid * R, R**(-N) * v.values, Original(t), v.params, derivative=du)

def mass_rescale(u: RadialGridFunction, M_target: float) -> MassRescaled:
  '''
  Returns lam u(lam^{p-2} t, x), lam = M_target / mass(u), which solves the same equation and has mass M_target.

  The output is stamped at time t lam^{2-p}; 'time_factor' = lam^{p-2} maps new times back to old ones.
  '''
  _require_good_range(u.params, "mass_rescale")
  M = mass(u)
  if not M > 0:
    raise ParameterError("mass_rescale needs a datum with positive mass")
  if not M_target > 0:
    raise ParameterError(f"target mass must be positive (got {M_target})")
  lam = M_target / M
  factor = lam**(u.params.p - 2.0)
  frame = Original(u.frame.time / factor) if isinstance(u.frame, Original) else u.frame
  du = None if u.derivative is None else lam * u.derivative
  out = RadialGridFunction(u.grid, lam * u.values, frame, u.params, derivative=du)
  logger.debug(f"mass_rescale: lambda={lam:.6g}, time factor={factor:.6g}")
  return MassRescaled(out, lam, factor)


## ---- weighted fast-diffusion profiles ----

def _fde_check(m: float, n: float):
  if not (0.0 < m < 1.0 and n > 2.0):
    raise ParameterError(f"FDE profiles need 0 < m < 1 and n > 2 (got m={m}, n={n})")

def _fde_theta(m: float, n: float) -> float:
  return 1.0 / (2.0 - n * (1.0 - m))

def eval_UD(m: float, D: float, rho: ArrayLike) -> ArrayLike:
  ''' Stationary profile (D + (1-m)/(2m) rho^2)^{-1/(1-m)} of the rescaled weighted equation. '''
  rho = np.asarray(rho, dtype=float)
  return (D + (1.0 - m) / (2.0 * m) * rho**2)**(-1.0 / (1.0 - m))

def fde_a1(m: float, n: float, M: float, N: int) -> float:
  _fde_check(m, n)
  th = _fde_theta(m, n)
  if not th > 0:
    raise ParameterError(f"the weighted Barenblatt needs m > (n-2)/n (got m={m}, n={n})")
  a2 = (1.0 - m) * th / (2.0 * m)
  C0 = omega(N) * 0.5 * beta_fn(n / 2.0, 1.0 / (1.0 - m) - n / 2.0)
  return (a2**(-n / 2.0) * C0)**(2.0 * th * (1.0 - m)) * M**(-2.0 * th * (1.0 - m))

def fde_barenblatt(m: float, n: float, M: float, t: ArrayLike, rho: ArrayLike, N: int) -> ArrayLike:
  '''
  Barenblatt solution t^{-n theta} (a1 + a2 xi^2)^{-1/(1-m)}, xi = rho t^{-theta}, of the weighted
  equation with a Dirac of weighted mass M (measure omega_N rho^{n-1} d rho) at t = 0.
  '''
  a1 = fde_a1(m, n, M, N)
  th = _fde_theta(m, n)
  t = np.asarray(t, dtype=float)
  xi = np.asarray(rho, dtype=float) * t**(-th)
  return t**(-n * th) * (a1 + (1.0 - m) * th / (2.0 * m) * xi**2)**(-1.0 / (1.0 - m))

def fde_D_of_mass(m: float, n: float, M: float, N: int) -> float:
  ''' D such that U_D is the rescaled profile of the weighted Barenblatt of mass M (scale (t/theta)^theta). '''
  th = _fde_theta(m, n)
  return fde_a1(m, n, M, N) * th**(n * th * (1.0 - m))

def fde_pseudo_barenblatt(m: float, n: float, D: float, T: float, t: ArrayLike, rho: ArrayLike) -> ArrayLike:
  ''' S^{-n} U_D(rho / S) with S = ((T-t)/|theta|)^theta, for m < (n-2)/n. '''
  _fde_check(m, n)
  th = _fde_theta(m, n)
  if not th < 0:
    raise ParameterError(f"the weighted pseudo-Barenblatt needs m < (n-2)/n (got m={m}, n={n})")
  t = np.asarray(t, dtype=float)
  if np.any(t >= T):
    raise ParameterError(f"t must stay below the extinction time T={T}")
  S = ((T - t) / abs(th))**th
  return S**(-n) * eval_UD(m, D, np.asarray(rho, dtype=float) / S)


## ---- comparison diagnostics ----

def decay_lemma_bound(D1: float, D2: float, D: float, params: Params, r: ArrayLike) -> Tuple[float, float]:
  '''
  Both sides of the tail bound sup_{r>=1} |V_{D2} - V_{D1}| r^w <= q |D2 - D1| sup_{r>=1} V_{D0}^{1/(p-1)} r^w,
  w = p/((p-1)(2-p)), D0 = min(D1, D2). D is the reference whose weight r^w is used.
  '''
  p = params.p
  r = np.asarray(r, dtype=float)
  r = r[r >= 1.0]
  w = p / ((p - 1.0) * (2.0 - p))
  V1, _ = eval_VD(D1, r, params)
  V2, _ = eval_VD(D2, r, params)
  V0, _ = eval_VD(min(D1, D2), r, params)
  lhs = np.max(np.abs(V2 - V1) * r**w)
  rhs = params.q * abs(D2 - D1) * np.max(V0**(1.0 / (p - 1.0)) * r**w)
  return float(lhs), float(rhs)

def sandwich_flags(v: RadialGridFunction, D1: float, D2: float, rtol: float = 1e-10) -> SandwichFlags:
  ''' Checks V_{D1} <= v <= V_{D2} and the derivative sandwich dV_{D2} <= dv <= dV_{D1} (needs D1 >= D2). '''
  if D1 < D2:
    raise ParameterError("sandwich needs D1 >= D2 so that V_{D1} <= V_{D2}")
  r = v.grid
  lo, dlo = eval_VD(D1, r, v.params)
  hi, dhi = eval_VD(D2, r, v.params)
  dv = v.radial_derivative()
  viol = np.concatenate((
    (lo - v.values) / hi,
    (v.values - hi) / hi,
    (dv - dlo) / np.maximum(np.abs(dhi), 1e-300),
    (dhi - dv) / np.maximum(np.abs(dhi), 1e-300),
  ))
  n = len(r)
  lower = bool(np.all(viol[:n] <= rtol))
  upper = bool(np.all(viol[n:2 * n] <= rtol))
  deriv = bool(np.all(viol[2 * n + 1:3 * n] <= 1e-6)) and bool(np.all(viol[3 * n + 1:] <= 1e-6))
  return SandwichFlags(lower, upper, deriv, float(max(np.max(viol), 0.0)))

def gradient_decay_diagnostics(trajectory) -> "pd.DataFrame":
  '''
  Per snapshot with t > 0: t^{N beta} sup u, t^{(N+1) beta} sup |u_r| and t^{(N+1) beta} sup (1+r)^{2/(2-p)} |u_r|.
  '''
  import pandas as pd
  rows = []
  for t, u in trajectory.snapshots:
    if t <= 0:
      continue
    p, N = u.params.p, u.params.N
    bt = beta(u.params)
    du = np.abs(u.radial_derivative())
    rows.append({
      "time": t,
      "scaled_sup": t**(N * bt) * np.max(u.values),
      "scaled_sup_grad": t**((N + 1.0) * bt) * np.max(du),
      "scaled_weighted_grad": t**((N + 1.0) * bt) * np.max((1.0 + u.grid)**(2.0 / (2.0 - p)) * du),
    })
  return pd.DataFrame(rows, columns=["time", "scaled_sup", "scaled_sup_grad", "scaled_weighted_grad"])
