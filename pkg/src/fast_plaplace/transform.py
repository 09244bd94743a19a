import logging
import numpy as np
from typing import *
from collections import namedtuple
from dataclasses import dataclass, replace
from numpy.typing import ArrayLike

from .errors import ParameterError, NonIntegrableTail
from .exponents import Params, fde_parameters, theta, is_critical, p_c, p_Y, p_12
from .profiles import (
  RadialGridFunction, BarenblattSpec, MassParam, FreeParam, FrameMap, Original,
  barenblatt_grid, eval_barenblatt, fde_barenblatt, fde_pseudo_barenblatt
)
from .stencils import radial_grid, refine, log_spacing, tail_power, cumulative_tail_integral

logger = logging.getLogger(__name__)

TheoremSupport = namedtuple("TheoremSupport", ["supported", "case", "requirement"])
EquivalenceReport = namedtuple("EquivalenceReport", ["times", "discrepancy", "max_discrepancy"])

## Relative slack on -u_r before a profile counts as increasing
MONOTONE_TOL = 1e-10


@dataclass(frozen=True)
class TransformConstants:
  '''
  Constants of the radial map between the p-Laplace flow in (p, N) and the weighted fast-diffusion
  flow in (m, n) with weight exponent frak_a = N - n.

  D_const scales the derivative, frakC corrects the mass of the Barenblatt and frakC_bar the free
  parameter of the pseudo-Barenblatt (None at p = p_c).
  '''
  m: float
  n: float
  frak_a: float
  D_const: float
  frakC: float
  frakC_bar: Optional[float]

  @property
  def b(self) -> float:
    ''' Exponent of r = rho^b. '''
    return 2.0 * self.m / (self.m + 1.0)

def transform_constants(params: Params) -> TransformConstants:
  p, N = params.p, params.N
  m, n, a = fde_parameters(params)
  b = 2.0 * m / (m + 1.0)
  D_const = b**(2.0 / (m - 1.0))
  frakC = p * N / (2.0 * (p - 1.0) * D_const)
  th = theta(params)
  frakC_bar = None if not np.isfinite(th) else (1.0 / b)**(2.0 * th + 1.0)
  return TransformConstants(m=m, n=n, frak_a=a, D_const=D_const, frakC=frakC, frakC_bar=frakC_bar)

def phi_grid(r: ArrayLike, params: Params) -> np.ndarray:
  ''' The induced grid rho = r^{(m+1)/(2m)} = r^{p'/2}. '''
  return np.asarray(r, dtype=float)**(0.5 * params.p_prime)

def theorem_support(params: Params) -> TheoremSupport:
  """
  Whether the correspondence of the two Cauchy problems is covered by theory for (p, N), and the
  hypothesis the datum must satisfy. Runs outside are allowed and labelled unsupported.
  """
  p, N = params.p, params.N
  pc, pY = p_c(N), p_Y(N)
  _, p2 = p_12(N)
  if p > pc and not is_critical(params):
    return TheoremSupport(True, "good range", "derivative bound |u0_r| <= A r^{1/(p-1)} (1+r)^{-p/((p-1)(2-p))}")
  if N == 2 or 3 <= N <= 6:
    if p >= max(pY, 1.0) and p > 1.0:
      return TheoremSupport(True, "below p_c", "derivative sandwich between two pseudo-Barenblatt profiles")
  elif p2 is not None and p2 < p < pc:
    return TheoremSupport(True, "below p_c", "derivative sandwich between two pseudo-Barenblatt profiles")
  elif p2 is not None and pY <= p <= p2:
    return TheoremSupport(True, "below p_2", "derivative sandwich and a weighted tail condition on the datum")
  return TheoremSupport(False, "unsupported", "none: the correspondence of the Cauchy problems is not established")


## ---- the transform ----

def u_to_phi(u: RadialGridFunction) -> RadialGridFunction:
  """
  Phi(rho) = -u_r(rho^b) / (D_const rho^{2/(m+1)}), b = 2m/(m+1), sampled on the induced grid.

  Uses the exact derivative of u when it carries one. The value at rho = 0 is the even extension
  limit, a least-squares fit Phi ~ c0 + c1 rho^2 on the first three nodes past the origin.
  """
  params = u.params
  C = transform_constants(params)
  r = u.grid
  g = -np.asarray(u.radial_derivative(), dtype=float)
  scale = max(float(np.max(np.abs(g))), 0.0)
  if np.any(g < -MONOTONE_TOL * max(scale, 1e-300)) and scale > 0:
    i = int(np.argmin(g))
    raise ParameterError(f"u_to_phi needs a radially nonincreasing profile (u_r = {-g[i]:.3e} > 0 at r = {r[i]:.4g})")
  g = np.maximum(g, 0.0)
  rho = phi_grid(r, params)
  phi = np.zeros_like(r)
  ## rho^{2/(m+1)} = r^{1/(p-1)}
  phi[1:] = g[1:] / (C.D_const * r[1:]**(1.0 / (params.p - 1.0)))
  if len(r) >= 4:
    c1, c0 = np.polyfit(rho[1:4]**2, phi[1:4], 1)
    phi[0] = max(c0, 0.0)
  else:
    phi[0] = phi[1]
  return RadialGridFunction(rho, phi, u.frame, params)

def phi_to_u(phi: RadialGridFunction) -> RadialGridFunction:
  '''
  u(r) = D_const int_r^inf Phi(s^{1/b}) s^{1/(p-1)} ds on the grid r = rho^b.

  The integral past the grid is completed with the majorant decay s^{-2/(2-p)} of the integrand;
  a fitted tail slower than s^{-1} raises NonIntegrableTail.
  '''
  params = phi.params
  C = transform_constants(params)
  p = params.p
  r = phi.grid**C.b
  r[0] = 0.0
  F = phi.values * r**(1.0 / (p - 1.0))
  a = tail_power(r, F)
  if a is not None and a <= 1.0 + 1e-2:
    raise NonIntegrableTail(a, 1.0, "phi_to_u integrand")
  U = C.D_const * cumulative_tail_integral(r, F, tail_decay=2.0 / (2.0 - p))
  U = np.maximum(U, 0.0)
  return RadialGridFunction(r, U, phi.frame, params)


## ---- closed-form correspondences ----

def _max_rel(a: np.ndarray, b: np.ndarray) -> float:
  with np.errstate(divide="ignore", invalid="ignore"):
    rel = np.abs(a - b) / np.abs(b)
  rel = rel[np.isfinite(rel)]
  return float(np.max(rel)) if len(rel) else 0.0

def barenblatt_correspondence(params: Params, M: float, t: ArrayLike, r: ArrayLike) -> float:
  """
  Largest relative mismatch between -d_r B_M(t, r) and D_const rho^{2/(m+1)} frakB_{frakC M}(t, rho)
  over the (t, r) sample, both sides in closed form. Needs p_c < p < 2 and r > 0.
  """
  C = transform_constants(params)
  t = np.atleast_1d(np.asarray(t, dtype=float))[:, None]
  r = np.atleast_1d(np.asarray(r, dtype=float))[None, :]
  if np.any(r <= 0):
    raise ParameterError("barenblatt_correspondence is evaluated at r > 0")
  _, dB = eval_barenblatt(BarenblattSpec(params, MassParam(M)), t, r)
  rho = phi_grid(r, params)
  rhs = C.D_const * r**(1.0 / (params.p - 1.0)) * fde_barenblatt(C.m, C.n, C.frakC * M, t, rho, params.N)
  return _max_rel(-dB, rhs)

def pseudo_barenblatt_correspondence(params: Params, D: float, T: float, t: ArrayLike, r: ArrayLike) -> float:
  '''
  Largest relative mismatch between -d_r B_{D,T}(t, r) and D_const rho^{2/(m+1)} frakB_{frakC_bar D, T}(t, rho), p < p_c.
  '''
  if is_critical(params) or params.p > p_c(params.N):
    raise ParameterError(f"the pseudo-Barenblatt correspondence needs p < p_c (got p={params.p})")
  C = transform_constants(params)
  t = np.atleast_1d(np.asarray(t, dtype=float))[:, None]
  r = np.atleast_1d(np.asarray(r, dtype=float))[None, :]
  if np.any(r <= 0):
    raise ParameterError("pseudo_barenblatt_correspondence is evaluated at r > 0")
  _, dB = eval_barenblatt(BarenblattSpec(params, FreeParam(D, T)), t, r)
  rho = phi_grid(r, params)
  rhs = C.D_const * r**(1.0 / (params.p - 1.0)) * fde_pseudo_barenblatt(C.m, C.n, C.frakC_bar * D, T, t, rho)
  return _max_rel(-dB, rhs)


## ---- cross-solver residual ----

def equivalence_residual(u_traj, phi_traj) -> EquivalenceReport:
  '''
  Per snapshot, sup |u_to_phi(u(t)) - Phi(t)| / sup |Phi(t)| on the overlap of the two rho-grids,
  leaving out the extrapolated origin node. Both trajectories must share their time stamps.
  '''
  tu, tp = u_traj.times, phi_traj.times
  if len(tu) != len(tp) or not np.allclose(tu, tp, rtol=1e-10, atol=1e-14):
    raise ParameterError(f"trajectories must share time stamps (got {len(tu)} and {len(tp)} snapshots)")
  out = []
  for (t, u), (_, phi) in zip(u_traj.snapshots, phi_traj.snapshots):
    mapped = u_to_phi(u)
    rho, a = mapped.grid[1:], mapped.values[1:]
    if len(phi.grid) == len(mapped.grid) and np.allclose(phi.grid, mapped.grid, rtol=1e-12, atol=0):
      b = phi.values[1:]
    else:
      inside = (rho >= phi.grid[1]) & (rho <= phi.grid[-1])
      rho, a = rho[inside], a[inside]
      b = np.interp(np.log(rho), np.log(phi.grid[1:]), phi.values[1:])
    scale = float(np.max(np.abs(b))) if len(b) else 0.0
    out.append(0.0 if scale == 0.0 else float(np.max(np.abs(a - b))) / scale)
  out = np.array(out)
  return EquivalenceReport(tu, out, float(np.max(out)) if len(out) else 0.0)

def _transform_datum(params: Params, datum: str, r: np.ndarray, D1: float = 2.0, D2: float = 1.0, weight: float = 0.5):
  ''' Radially decreasing p-Laplace datum with its frame map and start time. '''
  if params.p > p_c(params.N) and not is_critical(params):
    if datum != "barenblatt":
      raise ParameterError(f"datum {datum!r} is only set up below p_c; use 'barenblatt'")
    return barenblatt_grid(BarenblattSpec(params, MassParam(1.0)), 1.0, r), None
  fmap = FrameMap(params, 1.0)
  lo = barenblatt_grid(BarenblattSpec(params, FreeParam(D1, 1.0)), 0.0, r)
  if datum == "barenblatt":
    return lo, fmap
  if datum != "sandwich":
    raise ParameterError(f"unknown datum {datum!r}; must be 'barenblatt' or 'sandwich'")
  hi = barenblatt_grid(BarenblattSpec(params, FreeParam(D2, 1.0)), 0.0, r)
  values = weight * lo.values + (1.0 - weight) * hi.values
  du = weight * lo.derivative + (1.0 - weight) * hi.derivative
  return RadialGridFunction(r, values, Original(0.0), params, derivative=du), fmap

def refinement_study(params: Params, config, datum: str = "barenblatt", refinements: int = 3, t_end: Optional[float] = None, nodes: int = 257, r_min: float = 1e-3, r_max: float = 1e2) -> "pd.DataFrame":
  """
  Runs both solvers on nested grids (halving the log spacing and the step cap together) and
  reports the largest equivalence residual per level.

  Returns:
    a DataFrame with columns nodes, h, dt, discrepancy and supported
  """
  import pandas as pd
  from .solver import evolve_cple, evolve_wfde
  assert refinements >= 1, "Need at least one level"
  C = transform_constants(params)
  support = theorem_support(params)
  if not support.supported:
    logger.warning(f"transform refinement at p={params.p}, N={params.N} is unsupported by theory")
  r = radial_grid(r_min, r_max, nodes)
  rows = []
  for level in range(refinements):
    cfg = replace(config, dt=config.dt / 2**level)
    u0, fmap = _transform_datum(params, datum, r)
    phi0 = u_to_phi(u0)
    if fmap is None:
      end = 2.0 if t_end is None else t_end
      u_traj = evolve_cple(u0, cfg, end)
      phi_traj = evolve_wfde(phi0, C.m, C.n, cfg, end)
    else:
      end = 0.5 * fmap.T if t_end is None else t_end
      ## rho-scale S = R^{p'/2}, so the far-field rate is p'/2 times the one of R
      u_traj = evolve_cple(u0, cfg, end, fmap=fmap)
      phi_traj = evolve_wfde(phi0, C.m, C.n, cfg, end, rate=lambda t: 0.5 * params.p_prime * fmap.log_rate(t))
    rep = equivalence_residual(u_traj, phi_traj)
    rows.append({"nodes": len(r) - 1, "h": log_spacing(r), "dt": cfg.dt, "discrepancy": rep.max_discrepancy, "supported": support.supported})
    logger.info(f"transform refinement level {level}: {len(r) - 1} nodes, discrepancy {rep.max_discrepancy:.3e}")
    r = refine(r)
  return pd.DataFrame(rows, columns=["nodes", "h", "dt", "discrepancy", "supported"])
