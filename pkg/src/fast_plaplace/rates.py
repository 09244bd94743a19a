import logging
import numpy as np
from typing import *
from collections import namedtuple
from dataclasses import dataclass, replace, field
from numpy.typing import ArrayLike

from .errors import ParameterError
from .exponents import Params, beta, p_M, lambda_star, lambda_hp, classify_regime, _require_good_range
from .profiles import RadialGridFunction, SelfSimilar, eval_VD, log_VD, D_of_mass, xp_norm, sandwich_flags
from .stencils import radial_grid

logger = logging.getLogger(__name__)

MODES = ("exp_in_tau", "power_in_t")
_MODE_ALIASES = {"exp": "exp_in_tau", "power": "power_in_t"}

## Exponential fits skip the transient tau < INITIAL_LAYER unless a window is given
INITIAL_LAYER = 1.0
MIN_POINTS = 8
## L1 distances below NOISE_FLOOR * mass are scheme noise around a stationary profile
NOISE_FLOOR = 1e-4
## Relative half-width of the accepted band around the linearized entropy rate, per spectrum kind
ENTROPY_RATE_TOL = {"eigenvalue": 0.15, "essential spectrum": 0.20}

RateTargets = namedtuple("RateTargets", ["lambda_star", "linearized", "lambda_hp", "label"])
ShiftedRates = namedtuple("ShiftedRates", ["time_shift_rate", "space_shift_rate"])
GronwallCheck = namedtuple("GronwallCheck", ["hypothesis", "conclusion", "holds", "windows"])


@dataclass(frozen=True)
class RateFit:
  '''
  Least-squares line through log(value) against time ("exp_in_tau") or log(time) ("power_in_t").

  fitted_rate is the decay rate -slope in exponential mode and the exponent slope in power mode.
  '''
  series: np.ndarray
  fitted_rate: float
  intercept: float
  r_squared: float
  window: Tuple[float, float]
  mode: str = "exp_in_tau"
  residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

  def as_dict(self) -> dict:
    return {
      "fitted_rate": self.fitted_rate, "intercept": self.intercept, "r_squared": self.r_squared,
      "window": list(self.window), "mode": self.mode, "points": int(len(self.residuals)),
      "max_residual": float(np.max(np.abs(self.residuals))) if len(self.residuals) else 0.0,
    }


@dataclass(frozen=True)
class CylinderThresholds:
  eps: float
  rho_under: float
  rho_over: float
  T_under: float
  T_over: float
  c: float
  eps_under: float
  eps_over: float


def fit_rate(series: ArrayLike, mode: str = "exp_in_tau", window: Optional[Tuple[Optional[float], Optional[float]]] = None, weights: Optional[ArrayLike] = None) -> RateFit:
  """
  Fits a decay rate to a (time, value) series.

  Parameters:
    series: array-like of (time, value) rows
    mode: "exp_in_tau" (log value linear in time) or "power_in_t" (linear in log time); "exp" and "power" are accepted too
    window: (t_lo, t_hi), either end None for unbounded; exponential fits default to t >= 1
    weights: optional per-row weights of the squared log residuals
  """
  mode = _MODE_ALIASES.get(mode, mode)
  if mode not in MODES:
    raise ParameterError(f"Invalid mode '{mode}'; must be one of {MODES}")
  arr = np.asarray(series, dtype=float)
  if arr.ndim != 2 or arr.shape[1] != 2:
    raise ParameterError("series must be a sequence of (time, value) pairs")
  t, y = arr[:, 0], arr[:, 1]
  if window is None:
    window = (INITIAL_LAYER, None) if mode == "exp_in_tau" else (None, None)
  lo = -np.inf if window[0] is None else float(window[0])
  hi = np.inf if window[1] is None else float(window[1])
  sel = (t >= lo) & (t <= hi) & np.isfinite(y)
  if sel.sum() < MIN_POINTS:
    raise ParameterError(f"fit_rate needs at least {MIN_POINTS} points in the window [{lo}, {hi}] (got {int(sel.sum())})")
  if np.any(y[sel] <= 0):
    raise ParameterError("fit_rate needs strictly positive values in the window")
  if mode == "power_in_t" and np.any(t[sel] <= 0):
    raise ParameterError("power-law fits need positive times")
  x = t[sel] if mode == "exp_in_tau" else np.log(t[sel])
  ly = np.log(y[sel])
  w = None if weights is None else np.sqrt(np.asarray(weights, dtype=float)[sel])
  slope, intercept = np.polyfit(x, ly, 1, w=w)
  res = ly - (slope * x + intercept)
  ww = np.ones_like(ly) if w is None else w**2
  mean = np.sum(ww * ly) / np.sum(ww)
  ss_tot = float(np.sum(ww * (ly - mean)**2))
  r2 = 1.0 if ss_tot == 0.0 else float(np.clip(1.0 - np.sum(ww * res**2) / ss_tot, 0.0, 1.0))
  rate = -float(slope) if mode == "exp_in_tau" else float(slope)
  return RateFit(arr[sel], rate, float(intercept), r2, (lo, hi), mode, res)

def rate_targets(params: Params) -> RateTargets:
  ''' Lambda* (guaranteed entropy rate) and 2 Lambda* (the linearized entropy rate) in the good range. '''
  if not classify_regime(params).good_range:
    return RateTargets(None, None, None, "open")
  ls = lambda_star(params)
  return RateTargets(ls, 2.0 * ls, lambda_hp(params), "eigenvalue" if params.p > p_M(params.N) else "essential spectrum")

def entropy_rate_window(params: Params) -> Optional[Tuple[float, float]]:
  '''
  Band a fitted entropy rate must fall in: the linearized rate 2 Lambda* widened by ENTROPY_RATE_TOL.
  The upper end is the optimality ceiling no sustained rate may exceed. None outside the good range.
  '''
  targets = rate_targets(params)
  if targets.linearized is None:
    return None
  tol = ENTROPY_RATE_TOL[targets.label]
  return (1.0 - tol) * targets.linearized, (1.0 + tol) * targets.linearized

def sandwich_datum(params: Params, D1: float, D2: float, weight: float = 0.5, r: Optional[np.ndarray] = None, tau: float = 0.0) -> RadialGridFunction:
  '''
  weight V_{D1} + (1 - weight) V_{D2} with D1 > D2: radially decreasing, between V_{D1} and V_{D2}
  together with its derivative, and carrying its exact derivative.
  '''
  if not D1 > D2 > 0:
    raise ParameterError(f"sandwich needs D1 > D2 > 0 (got D1={D1}, D2={D2})")
  if not 0.0 <= weight <= 1.0:
    raise ParameterError(f"weight must lie in [0, 1] (got {weight})")
  r = radial_grid() if r is None else r
  V1, dV1 = eval_VD(D1, r, params)
  V2, dV2 = eval_VD(D2, r, params)
  return RadialGridFunction(r, weight * V1 + (1.0 - weight) * V2, SelfSimilar(tau), params, derivative=weight * dV1 + (1.0 - weight) * dV2)


## ---- closed-form rates ----

def cylinder_thresholds(eps: float, M: float, tau1: float, tau2: float, params: Params, M1: float, M2: float, t0: float = 1.0) -> CylinderThresholds:
  """
  Radii rho(eps) (in units of t^beta) and times T(eps) past which a solution bracketed by
  B_{M1}(t - tau1) <= u <= B_{M2}(t + tau2) satisfies (1-eps) B_M <= u <= (1+eps) B_M.

  eps_under = 1 - (M1/M)^{p beta} and eps_over = (M2/M)^{p beta} - 1 bound the admissible eps.
  """
  _require_good_range(params, "cylinder_thresholds")
  p = params.p
  bt = beta(params)
  if not (0 < M1 < M < M2):
    raise ParameterError(f"cylinder thresholds need M1 < M < M2 (got {M1}, {M}, {M2})")
  if not (tau1 > 0 and tau2 > 0):
    raise ParameterError("time shifts must be positive")
  eu = 1.0 - (M1 / M)**(p * bt)
  eo = (M2 / M)**(p * bt) - 1.0
  if not 0.0 < eps < min(eu, eo, 1.0):
    raise ParameterError(f"eps must lie in (0, {min(eu, eo, 1.0):.6g}) (got {eps})")
  a = (2.0 - p) / (p - 1.0)
  pp = params.p_prime
  c = params.k * bt**(bt * pp) / D_of_mass(params, M)
  lo, up = (1.0 - eps)**a, (1.0 + eps)**a
  rho_under = (lo * (1.0 + lo) / (c * (1.0 - eu)**a * (1.0 - lo)))**(1.0 / pp)
  rho_over = ((1.0 + up) / (c * (up - 1.0)))**(1.0 / pp)
  ## eta(t)^{1/(beta(p-1))} reaches 2/(1 + (1 -+ eps)^a) at t_1 and t_2
  X1 = (2.0 / (1.0 + lo))**(p - 1.0)
  X2 = (2.0 / (1.0 + up))**(p - 1.0)
  t1 = tau1 * X1 / (X1 - 1.0)
  t2 = tau2 * X2 / (1.0 - X2)
  T_under = max(tau1 / (1.0 - (1.0 - eps)**(2.0 - p)), t1, t0)
  T_over = max(tau2 / ((1.0 + eps)**(2.0 - p) - 1.0), t2, t0)
  return CylinderThresholds(eps, rho_under, rho_over, T_under, T_over, c, eu, eo)

def _time_shift_error(params: Params, D: float, t: float, T: float, y: np.ndarray) -> float:
  p, N = params.p, params.N
  bt = beta(params)
  R0, R1 = (t / bt)**bt, ((t + T) / bt)**bt
  r = y * R0
  d = -N * np.log(R1 / R0) + log_VD(D, r / R1, params) - log_VD(D, y, params)
  far = (N - p / (2.0 - p)) * np.log(R0 / R1)
  return float(max(np.max(np.abs(np.expm1(d))), abs(np.expm1(far))))

def _space_shift_error(params: Params, D: float, t: float, x0: float, z: np.ndarray) -> float:
  bt = beta(params)
  R = (t / bt)**bt
  d = log_VD(D, np.abs(z + x0 / R), params) - log_VD(D, np.abs(z), params)
  return float(np.max(np.abs(np.expm1(d))))

def shifted_barenblatt_rates(params: Params, M: float, T: float, x0: float, decades: Tuple[float, float] = (3.0, 6.0), points: int = 16) -> ShiftedRates:
  '''
  Power-law exponents of sup |B_M(t+T)/B_M(t) - 1| and sup |B_M(t, . + x0)/B_M(t, .) - 1|, fitted on
  times where the shift is 'decades' orders of magnitude below the natural scale.
  '''
  _require_good_range(params, "shifted_barenblatt_rates")
  if T == 0 or x0 == 0:
    raise ParameterError("zero shifts give an identically zero error; the rate is undefined")
  if not T > 0:
    raise ParameterError(f"time shift must be positive (got {T})")
  D = D_of_mass(params, M)
  bt = beta(params)
  y = np.concatenate(([0.0], np.geomspace(1e-4, 1e8, 1201)))
  z = np.concatenate((-np.geomspace(1e-4, 1e4, 1001)[::-1], [0.0], np.geomspace(1e-4, 1e4, 1001)))
  ts = T * np.logspace(decades[0], decades[1], points)
  time_err = [_time_shift_error(params, D, t, T, y) for t in ts]
  ## R(t) = |x0| 10^k
  tx = bt * (abs(x0) * np.logspace(decades[0], decades[1], points))**(1.0 / bt)
  space_err = [_space_shift_error(params, D, t, x0, z) for t in tx]
  a = fit_rate(np.column_stack((ts, time_err)), "power_in_t")
  b = fit_rate(np.column_stack((tx, space_err)), "power_in_t")
  logger.debug(f"shifted Barenblatt: time exponent {a.fitted_rate:.5f} (r2 {a.r_squared:.6f}), space exponent {b.fitted_rate:.5f}")
  return ShiftedRates(a.fitted_rate, b.fitted_rate)

def weak_gronwall_check(series: ArrayLike, s: float, rtol: float = 1e-3) -> GronwallCheck:
  """
  Numerical check of: s int_t^inf u <= u(t) for all t >= t_i implies u(t) <= (e^s/s) u(t_i) e^{-s(t-t_i)}.

  Tail integrals are trapezoidal, completed past the last time by the exponential fitted on the last
  quarter of the series. Every start t_i from which the hypothesis holds (up to rtol) is a window;
  'holds' reports whether the conclusion is true on all windows.
  """
  if not s > 0:
    raise ParameterError(f"s must be positive (got {s})")
  arr = np.asarray(series, dtype=float)
  t, u = arr[:, 0], arr[:, 1]
  if np.any(u < 0):
    raise ParameterError("weak_gronwall_check needs a nonnegative series")
  if np.any(np.diff(u) > rtol * u[:-1]):
    logger.info("weak_gronwall_check: the series is not nonincreasing")
  q = max(len(t) // 4, 2)
  tt, uu = t[-q:], u[-q:]
  if np.all(uu > 0):
    kappa = -np.polyfit(tt, np.log(uu), 1)[0]
  else:
    kappa = np.inf
  rest = u[-1] / kappa if kappa > 0 else (0.0 if u[-1] == 0 else np.inf)
  seg = 0.5 * (u[1:] + u[:-1]) * np.diff(t)
  tail = np.append(np.cumsum(seg[::-1])[::-1], 0.0) + rest
  hyp = s * tail <= u * (1.0 + rtol) + 1e-300
  ## suffix_ok[i]: hypothesis on every node from i on
  suffix_ok = np.flip(np.logical_and.accumulate(np.flip(hyp)))
  windows = np.flatnonzero(suffix_ok)
  concl = True
  for i in windows:
    bound = np.exp(s) / s * u[i] * np.exp(-s * (t[i:] - t[i]))
    concl = concl and bool(np.all(u[i:] <= bound * (1.0 + rtol)))
  hypothesis = bool(suffix_ok[0])
  return GronwallCheck(hypothesis, bool(concl) if len(windows) else None, bool(concl), int(len(windows)))


## ---- pipelines ----

@dataclass
class RateExperiment:
  label: str
  fits: Dict[str, Optional[RateFit]]
  targets: RateTargets
  transfer_ok: Optional[bool]
  trajectory: Any = None
  monotone: Optional[bool] = None

  @property
  def rates(self) -> Dict[str, Optional[float]]:
    return {k: (None if f is None else f.fitted_rate) for k, f in self.fits.items()}

  def as_dict(self) -> dict:
    return {
      "label": self.label, "rates": self.rates, "transfer_ok": self.transfer_ok, "monotone": self.monotone,
      "targets": self.targets._asdict(),
      "fits": {k: (None if f is None else f.as_dict()) for k, f in self.fits.items()},
    }

def fit_columns(frame, columns: Sequence[str], window) -> Dict[str, Optional[RateFit]]:
  fits = {}
  for col in columns:
    try:
      fits[col] = fit_rate(frame[["time", col]].to_numpy(), "exp_in_tau", window)
    except ParameterError as e:
      logger.info(f"no {col} rate: {e}")
      fits[col] = None
  return fits

def _with_snapshots(config, every: float):
  return config if config.snapshot_every is not None else replace(config, snapshot_every=every)

def relative_error_rate_experiment(v0: RadialGridFunction, params: Params, config, tau_end: float = 8.0, D: Optional[float] = None, window: Tuple = (INITIAL_LAYER, None), sandwich: Optional[Tuple[float, float]] = None, snapshot_every: float = 0.25) -> RateExperiment:
  """
  Runs the rescaled flow from v0 and fits exponential rates of the entropy, the L^1 distance and the
  sup relative error to V_D.

  The transfer check asks rate_sup >= 0.8 rate_L1 (2-p)/(N+1). Data at the noise floor of the
  stationary profile are reported as "stationary".
  """
  from .solver import evolve_rcple
  if params != v0.params:
    raise ParameterError(f"datum carries {v0.params}, expected {params}")
  _require_good_range(params, "relative_error_rate_experiment")
  if not np.isfinite(xp_norm(v0)):
    raise ParameterError("the datum is not in X_p: its tail is not integrable")
  if params.p <= p_M(params.N):
    if sandwich is None:
      logger.warning(f"p={params.p} <= p_M without a sandwich: the rate is not covered by theory")
    else:
      flags = sandwich_flags(v0, *sandwich)
      if not (flags.lower and flags.upper):
        raise ParameterError(f"datum violates the sandwich V_{{D1}} <= v0 <= V_{{D2}} (max violation {flags.max_violation:.3e})")
  traj = evolve_rcple(v0, _with_snapshots(config, snapshot_every), tau_end, D=D)
  frame = traj.to_frame()
  targets = rate_targets(params)
  floor = NOISE_FLOOR * float(frame["mass"].iloc[0])
  if np.all(frame["l1_err"].to_numpy() <= floor):
    logger.info("relative_error_rate_experiment: datum is stationary to the noise floor")
    return RateExperiment("stationary", {"entropy": None, "l1_err": None, "sup_rel_err": None}, targets, None, traj)
  fits = fit_columns(frame, ("entropy", "l1_err", "sup_rel_err"), window)
  transfer = None
  if fits["l1_err"] is not None and fits["sup_rel_err"] is not None:
    factor = (2.0 - params.p) / (params.N + 1.0)
    transfer = bool(fits["sup_rel_err"].fitted_rate >= 0.8 * factor * fits["l1_err"].fitted_rate)
  return RateExperiment("converging", fits, targets, transfer, traj)

def very_fast_decay_experiment(v0: RadialGridFunction, params: Params, config, tau_end: float = 8.0, D: Optional[float] = None, bracket: Optional[Tuple[float, float]] = None, snapshot_every: float = 0.25) -> RateExperiment:
  '''
  Rescaled flow below p_c toward V_D: checks that the sup relative error decreases after tau = 1 and
  reports its fitted rate descriptively (the optimal rate is open there).

  D defaults to the root of int (v0 - V_D) = 0 inside 'bracket'.
  '''
  from .solver import evolve_rcple
  from .functionals import adjust_D
  if params != v0.params:
    raise ParameterError(f"datum carries {v0.params}, expected {params}")
  if classify_regime(params).good_range:
    raise ParameterError(f"very_fast_decay_experiment needs p <= p_c (got p={params.p})")
  if D is None:
    if bracket is None:
      raise ParameterError("very_fast_decay_experiment needs D or a bracket (D2, D1) to select V_D")
    D = adjust_D(v0, bracket=bracket)
  traj = evolve_rcple(v0, _with_snapshots(config, snapshot_every), tau_end, D=D)
  frame = traj.to_frame()
  late = frame[frame["time"] >= INITIAL_LAYER]["sup_rel_err"].to_numpy()
  monotone = bool(np.all(np.diff(late) <= 1e-12 * late[:-1])) if len(late) > 1 else None
  fits = fit_columns(frame, ("sup_rel_err",), (INITIAL_LAYER, None))
  fit = fits["sup_rel_err"]
  label = "decaying" if (monotone and fit is not None and fit.fitted_rate > 0) else "not decaying"
  logger.info(f"very fast decay toward V_D (D={D:.8g}): {label}")
  return RateExperiment(label, fits, rate_targets(params), None, traj, monotone=monotone)

def run_experiments(specs: Sequence, jobs: int = 1) -> List[Any]:
  ''' Runs independent experiment specs, in parallel worker processes when jobs > 1; results keep the input order. '''
  from .cli import run
  if jobs <= 1 or len(specs) <= 1:
    return [run(spec) for spec in specs]
  from concurrent.futures import ProcessPoolExecutor
  with ProcessPoolExecutor(max_workers=jobs) as pool:
    return list(pool.map(run, specs))
