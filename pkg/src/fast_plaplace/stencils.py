import numpy as np
from typing import *
from collections import namedtuple
from numpy.typing import ArrayLike
from numpy.lib.stride_tricks import sliding_window_view
from scipy.sparse import coo_array, csc_array
from scipy.special import gamma as gamma_fn
from scipy.integrate import quad, simpson, cumulative_simpson

from .errors import NonIntegrableTail

## Default radial grid: the origin plus log-spaced radii
R_MIN, R_MAX, NODES = 1e-4, 1e3, 2048

FVGeometry = namedtuple("FVGeometry", ["nodes", "faces", "areas", "volumes", "h"])

def radial_grid(r_min: float = R_MIN, r_max: float = R_MAX, nodes: int = NODES) -> np.ndarray:
  """Returns the grid [0, r_min, ..., r_max] with 'nodes' logarithmically spaced radii after the origin."""
  assert 0 < r_min < r_max, "Need 0 < r_min < r_max"
  assert nodes >= 8, "Grid needs at least 8 radii"
  return np.concatenate(([0.0], np.geomspace(r_min, r_max, nodes)))

def refine(r: np.ndarray) -> np.ndarray:
  ''' Nested refinement of a log grid: inserts the geometric midpoint of every cell past the origin. '''
  x = np.log(r[1:])
  mid = 0.5 * (x[1:] + x[:-1])
  out = np.empty(2 * len(x) - 1)
  out[0::2], out[1::2] = x, mid
  return np.concatenate(([0.0], np.exp(out)))

def log_spacing(r: np.ndarray) -> Optional[float]:
  ''' The uniform spacing in ln r of r[1:], or None when the grid is not log-uniform. '''
  if r[0] != 0.0 or len(r) < 6:
    return None
  dx = np.diff(np.log(r[1:]))
  return float(dx[0]) if np.allclose(dx, dx[0], rtol=1e-8, atol=0) else None

def omega(N: float) -> float:
  ''' Surface area of the unit sphere in R^N. '''
  return 2.0 * np.pi**(N / 2.0) / gamma_fn(N / 2.0)

def tridiagonal(diag: ArrayLike, upper: ArrayLike, lower: Optional[ArrayLike] = None) -> csc_array:
  ''' Sparse tridiagonal matrix; symmetric when 'lower' is omitted. '''
  diag, upper = np.asarray(diag, dtype=float), np.asarray(upper, dtype=float)
  lower = upper if lower is None else np.asarray(lower, dtype=float)
  n = len(diag)
  i = np.arange(n - 1)
  rows = np.concatenate((np.arange(n), i, i + 1))
  cols = np.concatenate((np.arange(n), i + 1, i))
  return coo_array((np.concatenate((diag, upper, lower)), (rows, cols)), shape=(n, n)).tocsc()

def to_banded(diag: np.ndarray, upper: np.ndarray, lower: np.ndarray) -> np.ndarray:
  ''' (3 x n) storage of a tridiagonal matrix for scipy.linalg.solve_banded((1, 1), ...). '''
  ab = np.zeros((3, len(diag)))
  ab[0, 1:], ab[1, :], ab[2, :-1] = upper, diag, lower
  return ab

def fv_geometry(r: np.ndarray, n: float) -> FVGeometry:
  '''
  Vertex-centred finite volumes for a radial problem in (possibly non-integer) dimension n.

  Faces sit at arithmetic midpoints, the first volume is the ball of radius r_{1/2} and
  the last one the half cell [r_{K-1/2}, r_K]. Areas and volumes drop the sphere constant.
  '''
  assert r[0] == 0.0 and np.all(np.diff(r) > 0), "Grid must start at 0 and increase strictly"
  faces = 0.5 * (r[1:] + r[:-1])
  edges = np.concatenate(([0.0], faces, [r[-1]]))
  volumes = (edges[1:]**n - edges[:-1]**n) / n
  return FVGeometry(nodes=r, faces=faces, areas=faces**(n - 1.0), volumes=volumes, h=np.diff(r))

def _log_derivative(x: np.ndarray, f: np.ndarray, dx: float) -> np.ndarray:
  ## Fourth-order central differences, second order in the two outermost nodes at each end
  df = np.gradient(f, x, edge_order=2)
  if len(f) >= 5:
    W = sliding_window_view(f, 5)
    df[2:-2] = (W[:, 0] - 8.0 * W[:, 1] + 8.0 * W[:, 3] - W[:, 4]) / (12.0 * dx)
  return df

def radial_derivative(r: np.ndarray, f: ArrayLike) -> np.ndarray:
  """
  Radial derivative df/dr of a radial profile sampled on r (r[0] = 0).

  On log-uniform grids the derivative is taken in ln r with a fourth-order stencil, then divided
  by r; otherwise numpy's second-order gradient is used. The value at the origin is 0.
  """
  f = np.asarray(f, dtype=float)
  dx = log_spacing(r)
  out = np.zeros_like(f)
  if dx is not None:
    out[1:] = _log_derivative(np.log(r[1:]), f[1:], dx) / r[1:]
  else:
    out = np.gradient(f, r, edge_order=2)
    if r[0] == 0.0:
      out[0] = 0.0
  return out

def tail_power(r: np.ndarray, F: np.ndarray, decades: float = 1.0) -> Optional[float]:
  ''' Least-squares decay power a of |F| ~ r^{-a} over the last 'decades' of the grid (None if F vanishes there). '''
  sel = (r >= r[-1] * 10.0**(-decades)) & (r > 0)
  x, y = np.log(r[sel]), np.abs(F[sel])
  ok = y > 0
  if ok.sum() < 3:
    return None
  slope = np.polyfit(x[ok], np.log(y[ok]), 1)[0]
  return -float(slope)

def radial_integral(r: np.ndarray, f: ArrayLike, N: float, weight_power: float = 0.0, tail: Union[str, float] = "fit", what: str = "integrand") -> float:
  """
  Computes omega_N * int_0^inf f(r) r^{N-1-weight_power} dr for a profile sampled on a grid starting at 0.

  Parameters:
    r: grid with r[0] = 0
    f: values on r
    N: dimension entering omega_N (the measure exponent is N - weight_power)
    weight_power: exponent of the weight |x|^{-weight_power}
    tail: "fit" (power law fitted on the last decade), "none", or the known decay power of the
      integrand f r^{N-1-weight_power}, used to complete the integral past r[-1]
  Returns:
    the integral; raises NonIntegrableTail if the fitted tail decays too slowly
  """
  f = np.asarray(f, dtype=float)
  d = N - weight_power
  assert d > 0, "Measure exponent must be positive"
  if not np.any(f):
    return 0.0
  x = np.log(r[1:])
  g = f[1:] * r[1:]**d
  body = simpson(g, x=x)
  f0 = f[0] if np.isfinite(f[0]) else f[1]
  inner = f0 * r[1]**d / d
  F = f * np.where(r > 0, r, 1.0)**(d - 1.0)
  if tail == "none":
    rest = 0.0
  else:
    a = tail_power(r, F) if tail == "fit" else float(tail)
    if a is None:
      rest = 0.0
    elif a <= 1.0 + 1e-2:
      raise NonIntegrableTail(a, 1.0, what)
    else:
      rest = F[-1] * r[-1] / (a - 1.0)
  return omega(N) * (inner + body + rest)

def cumulative_tail_integral(r: np.ndarray, F: np.ndarray, tail_decay: Optional[float] = None) -> np.ndarray:
  '''
  Returns T_j = int_{r_j}^inf F(s) ds on the grid (no sphere constant), integrating in ln r past the origin.

  The part beyond r[-1] uses F ~ r^{-tail_decay}; when tail_decay is None it is fitted, and an
  infinite tail yields np.inf everywhere.
  '''
  F = np.asarray(F, dtype=float)
  a = tail_power(r, F) if tail_decay is None else tail_decay
  if a is None:
    rest = 0.0
  elif a <= 1.0 + 1e-2:
    rest = np.inf
  else:
    rest = F[-1] * r[-1] / (a - 1.0)
  x = np.log(r[1:])
  g = F[1:] * r[1:]
  head = cumulative_simpson(g[::-1], x=-x[::-1], initial=0.0)[::-1]
  out = np.empty_like(F)
  out[1:] = head + rest
  out[0] = out[1] + F[1] * r[1] if np.isfinite(out[1]) else np.inf
  return out

def quad_radial(fn: Callable, N: float, weight_power: float = 0.0, method: str = "split", decay: Optional[float] = None, epsrel: float = 1e-13) -> float:
  """
  omega_N * int_0^inf fn(r) r^{N-1-weight_power} dr for a closed-form, algebraically decaying fn.

  method "split" integrates [0,1] and [1,inf) adaptively. Method "substitution" maps [1,inf) to
  s in [1/2,1) through r = s/(1-s) and factors out the tail with an algebraic quadrature weight;
  it needs 'decay', the power with fn(r) ~ r^{-decay}.
  """
  assert method in ["split", "substitution"], f"Invalid method '{method}'"
  w = N - 1.0 - weight_power
  integrand = lambda r: fn(r) * r**w
  inner = quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=epsrel, limit=200)[0]
  if method == "split":
    outer = quad(integrand, 1.0, np.inf, epsabs=0.0, epsrel=epsrel, limit=200)[0]
  else:
    assert decay is not None, "Substitution quadrature needs the analytic decay power"
    tau = decay - w
    assert tau > 1.0, "Integrand is not integrable at infinity"
    g = lambda s: integrand(s / (1.0 - s)) * (1.0 - s)**(-tau)
    outer = quad(g, 0.5, 1.0, weight="alg", wvar=(0.0, tau - 2.0), epsabs=0.0, epsrel=epsrel, limit=200)[0]
  return omega(N) * (inner + outer)
