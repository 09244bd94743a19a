import logging
import numpy as np
from typing import *
from collections import namedtuple
from dataclasses import dataclass, field
from numpy.typing import ArrayLike
from scipy.optimize import bisect

from .errors import EntropyUndefined, ParameterError, NonIntegrableTail
from .exponents import Params, gamma, P_TOL, _require_good_range
from .profiles import RadialGridFunction, BarenblattSpec, Stationary, SelfSimilar, eval_VD, eval_barenblatt, D_of_mass, mass
from .stencils import radial_integral, radial_derivative, tail_power

logger = logging.getLogger(__name__)

CKCheck = namedtuple("CKCheck", ["lhs", "rhs", "holds"])
GNCheck = namedtuple("GNCheck", ["lhs", "rhs", "ratio"])
FisherBound = namedtuple("FisherBound", ["lhs", "rhs", "eps", "kappa1", "kappa2"])

## Below this |v/V - 1| the entropy integrand uses its Taylor series
SERIES_CUTOFF = 1e-3

@dataclass(frozen=True)
class EntropyReport:
	entropy: float
	lin_entropy: float
	fisher: float
	lin_fisher_gamma: float
	lin_fisher: float
	eta: float = 0.0
	finite_flags: Dict[str, bool] = field(default_factory=dict)

	def as_dict(self) -> dict:
		return {k: getattr(self, k) for k in ("entropy", "lin_entropy", "fisher", "lin_fisher_gamma", "lin_fisher", "eta")}


def _gamma_of(params: Params) -> float:
	if abs(params.p - 1.5) <= P_TOL:
		raise EntropyUndefined("gamma = 0 at p = 3/2: the relative entropy is not defined")
	return gamma(params.p)

def phi(s: ArrayLike, p: float) -> ArrayLike:
	''' The p-Laplace flux |s|^{p-2} s, with phi(0) = 0. '''
	s = np.asarray(s, dtype=float)
	a = np.abs(s)
	return np.where(a > 0, np.where(a > 0, a, 1.0)**(p - 2.0) * s, 0.0)

def entropy_integrand(v: ArrayLike, V: ArrayLike, g: float) -> np.ndarray:
	'''
	(v^g - V^g - g V^{g-1}(v - V)) / (g (g - 1)), written as V^g e(v/V - 1).

	e(d) = ((1+d)^g - 1 - g d)/(g(g-1)) switches to its fourth-order Taylor series for small |d|.
	'''
	v, V = np.asarray(v, dtype=float), np.asarray(V, dtype=float)
	d = v / V - 1.0
	small = np.abs(d) < SERIES_CUTOFF
	e = np.empty_like(d)
	ds = d[small]
	e[small] = ds**2 / 2.0 + (g - 2.0) * ds**3 / 6.0 + (g - 2.0) * (g - 3.0) * ds**4 / 24.0
	dl = d[~small]
	with np.errstate(divide="ignore"):
		e[~small] = (np.expm1(g * np.log1p(dl)) - g * dl) / (g * (g - 1.0))
	return V**g * e

def _reference(v: RadialGridFunction, D: float) -> Tuple[np.ndarray, np.ndarray]:
	if not D > 0:
		raise ParameterError(f"D must be positive (got {D})")
	return eval_VD(D, v.grid, v.params)

def entropy(v: RadialGridFunction, D: float) -> float:
	"""
	Relative entropy E[v | V_D] = 1/(g(g-1)) int v^g - V_D^g - g V_D^{g-1}(v - V_D) dy, g = (2p-3)/(p-1).

	Raises EntropyUndefined at p = 3/2 and NonIntegrableTail when the integrand's fitted tail is too fat.
	"""
	g = _gamma_of(v.params)
	V, _ = _reference(v, D)
	h = entropy_integrand(v.values, V, g)
	if np.any(np.isinf(h)):
		return np.inf
	return radial_integral(v.grid, h, v.params.N, what="entropy integrand")

def _weight_derivatives(v: RadialGridFunction, D: float):
	g = _gamma_of(v.params)
	p = v.params.p
	V, _ = _reference(v, D)
	r = v.grid
	dw = radial_derivative(r, v.values**(g - 1.0))
	## grad V_D^{g-1} = (1-g) r^{1/(p-1)} exactly
	dW = (1.0 - g) * r**(1.0 / (p - 1.0))
	return g, V, dw, dW

def fisher(v: RadialGridFunction, D: float) -> float:
	'''
	Relative Fisher information 1/|g-1|^p int v (d_r v^{g-1} - d_r V_D^{g-1}) (phi(d_r v^{g-1}) - phi(d_r V_D^{g-1})) dy.
	'''
	g, V, dw, dW = _weight_derivatives(v, D)
	p = v.params.p
	h = v.values * (dw - dW) * (phi(dw, p) - phi(dW, p)) / abs(g - 1.0)**p
	return radial_integral(v.grid, h, v.params.N, what="Fisher integrand")

def lin_functionals(v: RadialGridFunction, D: float, eta: float = 0.0) -> Tuple[float, float, float]:
	"""
	Linearized entropy and the two linearized Fisher informations.

	Returns:
		(E, I_gamma, I) with E = 1/2 int |v - V_D|^2 V_D^{g-2}, and the Fisher-type quantities weighted
		by V_D (eta + |grad V_D^{g-1}|)^{p-2} as in their integral definitions
	"""
	if eta < 0:
		raise ParameterError(f"eta must be nonnegative (got {eta})")
	g, V, dw, dW = _weight_derivatives(v, D)
	p, N, r = v.params.p, v.params.N, v.grid
	E = radial_integral(r, 0.5 * (v.values - V)**2 * V**(g - 2.0), N, what="linearized entropy integrand")
	dz = radial_derivative(r, V**(g - 2.0) * (v.values - V))
	with np.errstate(divide="ignore", invalid="ignore"):
		mu = V * (eta + np.abs(dW))**(p - 2.0)
		Ig = (dw - dW)**2 * mu / abs(g - 1.0)**p
		I = dz**2 * mu / abs(g - 1.0)**p
	## Both integrands vanish at the origin for eta = 0
	Ig[0], I[0] = (0.0, 0.0) if eta == 0 else (Ig[0], I[0])
	I_gamma = radial_integral(r, Ig, N, what="linearized Fisher integrand")
	I_lin = radial_integral(r, I, N, what="linearized Fisher integrand")
	return E, I_gamma, I_lin

def entropy_report(v: RadialGridFunction, D: float, eta: float = 0.0) -> EntropyReport:
	vals = {}
	for name, fn in (("entropy", lambda: entropy(v, D)), ("fisher", lambda: fisher(v, D))):
		try:
			vals[name] = fn()
		except NonIntegrableTail as e:
			logger.info(f"{name}: {e}")
			vals[name] = np.inf
	try:
		vals["lin_entropy"], vals["lin_fisher_gamma"], vals["lin_fisher"] = lin_functionals(v, D, eta)
	except NonIntegrableTail as e:
		logger.info(f"linearized functionals: {e}")
		vals.update(lin_entropy=np.inf, lin_fisher_gamma=np.inf, lin_fisher=np.inf)
	flags = {k: bool(np.isfinite(x)) for k, x in vals.items()}
	return EntropyReport(eta=eta, finite_flags=flags, **vals)

## ---- comparison constants ----

def fisher_comparison_constants(params: Params, eps: float) -> Tuple[float, float]:
	''' Constants with c_lower I_gamma^(0) <= I <= c_upper I_gamma^(0) under (A1) and the derivative sandwich. '''
	_require_good_range(params, "fisher_comparison_constants")
	if not 0.0 < eps < 1.0:
		raise ParameterError(f"eps must lie in (0, 1) (got {eps})")
	p = params.p
	a = 1.0 + (1.0 - _gamma_of(params)) * (2.0 - p)
	return (1.0 - eps)**a * (p - 1.0) / (1.0 + eps)**(2.0 - p), (1.0 + eps)**a * (p - 1.0) / (1.0 - eps)**(2.0 - p)

def c_pn(params: Params) -> float:
	g = _gamma_of(params)
	return (params.N + params.p - g - 1.0) / (1.0 - g)**(2.0 - params.p)

def kappa_constants(params: Params, eps: float) -> Tuple[float, float]:
	if not 0.0 <= eps < 1.0:
		raise ParameterError(f"eps must lie in [0, 1) (got {eps})")
	g = _gamma_of(params)
	if not g > -1.0:
		raise ParameterError(f"the linearized Fisher comparison needs gamma > -1 (got {g:.4f})")
	k1 = (1.0 + eps)**(2.0 * (2.0 - g)) / (1.0 - g)**2
	k2 = c_pn(params) / (1.0 - g)**(params.p - 1.0) * ((1.0 + eps)**(2.0 * (2.0 - g)) / (1.0 - eps)**(2.0 * (2.0 - g)) - 1.0)
	return k1, k2

def linearized_fisher_bound(v: RadialGridFunction, D: float, eta: float = 0.0) -> FisherBound:
	'''
	Both sides of I^(eta) <= kappa1 I_gamma^(eta) + 2 kappa2 E, with eps the measured sup |v/V_D - 1|.

	The factor 2 enters because int h_2^2 V_D^g = 2E.
	'''
	V, _ = _reference(v, D)
	eps = float(np.max(np.abs(v.values / V - 1.0)))
	if not eps < 1.0:
		raise ParameterError(f"v is not within relative distance < 1 of V_D (eps={eps:.3g})")
	k1, k2 = kappa_constants(v.params, eps)
	E, Ig, I = lin_functionals(v, D, eta)
	return FisherBound(I, k1 * Ig + 2.0 * k2 * E, eps, k1, k2)

def divergence_weight(y: ArrayLike, eta: float, params: Params) -> np.ndarray:
	'''
	Closed form of div(y |y|^{1-g} (eta + X)^{p-2}), X = (1-g)|y|^{2-g}, for radial y = |y|:
	|y|^{1-g} (eta + X)^{p-3} [eta (N+1-g) + N X].
	'''
	g = _gamma_of(params)
	p, N = params.p, params.N
	y = np.abs(np.asarray(y, dtype=float))
	X = (1.0 - g) * y**(2.0 - g)
	return y**(1.0 - g) * (eta + X)**(p - 3.0) * (eta * (N + 1.0 - g) + N * X)

## ---- pointwise inequalities ----

def monotone_operator_gap(xi: ArrayLike, eta: ArrayLike, p: float) -> Tuple[np.ndarray, np.ndarray]:
	"""
	Gaps of the two lower bounds for <|xi|^{p-2}xi - |eta|^{p-2}eta, xi - eta> on vectors (last axis).

	Returns:
		(gap1, gap2): the inner product minus c1 |xi-eta|^2/(|xi|^{2-p}+|eta|^{2-p}), and minus
		c2 |xi-eta|^2/(|xi|+|eta|)^{2-p}, with c1 = min(1, 2(p-1)) and c2 = c1/2
	"""
	xi, eta = np.atleast_2d(xi).astype(float), np.atleast_2d(eta).astype(float)
	nx, ne = np.linalg.norm(xi, axis=-1), np.linalg.norm(eta, axis=-1)
	fx = np.where(nx[:, None] > 0, xi * np.where(nx > 0, nx, 1.0)[:, None]**(p - 2.0), 0.0)
	fe = np.where(ne[:, None] > 0, eta * np.where(ne > 0, ne, 1.0)[:, None]**(p - 2.0), 0.0)
	lhs = np.sum((fx - fe) * (xi - eta), axis=-1)
	d2 = np.sum((xi - eta)**2, axis=-1)
	c1 = min(1.0, 2.0 * (p - 1.0))
	return lhs - c1 * d2 / (nx**(2.0 - p) + ne**(2.0 - p)), lhs - 0.5 * c1 * d2 / (nx + ne)**(2.0 - p)

def scalar_fisher_chain(xi: ArrayLike, eta: ArrayLike, p: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
	''' (max^{p-2}(xi-eta)^2, F/(p-1), min^{p-2}(xi-eta)^2) with F = xi^p - xi^{p-1} eta - eta^{p-1} xi + eta^p. '''
	xi, eta = np.asarray(xi, dtype=float), np.asarray(eta, dtype=float)
	F = xi**p - xi**(p - 1.0) * eta - eta**(p - 1.0) * xi + eta**p
	d2 = (xi - eta)**2
	with np.errstate(divide="ignore", invalid="ignore"):
		lo = np.maximum(xi, eta)**(p - 2.0) * d2
		hi = np.where(d2 > 0, np.minimum(xi, eta)**(p - 2.0) * d2, 0.0)
	return lo, F / (p - 1.0), hi

## ---- mass balance and norms ----

def relative_mass(v: RadialGridFunction, D: float) -> float:
	''' int (v - V_D) dy; raises NonIntegrableTail where the difference of profiles is not integrable. '''
	V, _ = _reference(v, D)
	return radial_integral(v.grid, v.values - V, v.params.N, what="relative mass integrand")

def adjust_D(v: RadialGridFunction, params: Optional[Params] = None, rtol: float = 1e-12, bracket: Optional[Tuple[float, float]] = None) -> float:
	'''
	The D solving int (v - V_D) = 0 by bisection, around the closed-form mass-to-D guess in the good
	range or inside 'bracket' (e.g. the sandwich D2 <= D <= D1) otherwise.
	'''
	params = v.params if params is None else params
	f = lambda D: relative_mass(v, D)
	if bracket is not None:
		lo, hi = sorted(bracket)
		guess = np.sqrt(lo * hi)
	else:
		guess = D_of_mass(params, mass(v))
		lo, hi = 0.5 * guess, 2.0 * guess
		for _ in range(60):
			if f(lo) > 0:
				lo *= 0.5
			elif f(hi) < 0:
				hi *= 2.0
			else:
				break
	D = bisect(f, lo, hi, rtol=rtol, maxiter=200)
	logger.debug(f"adjust_D: initial guess {guess:.10g}, quadrature-consistent D {D:.10g}")
	return float(D)

def csiszar_kullback_check(v: RadialGridFunction, D: float, adjust: bool = False) -> CKCheck:
	'''
	Both sides of ||v - V_D||_1^2 <= 8 ||V_D^{2-g}||_1 E[v | V_D] for zero relative mass data.

	With adjust=True, D is first replaced by the quadrature-consistent root of int (v - V_D) = 0.
	'''
	if adjust:
		D = adjust_D(v)
	V, _ = _reference(v, D)
	N, r = v.params.N, v.grid
	m_ref = radial_integral(r, V, N)
	if abs(relative_mass(v, D)) > 1e-6 * m_ref:
		raise ParameterError("Csiszar-Kullback needs int (v - V_D) = 0; pass adjust=True to match D")
	g = _gamma_of(v.params)
	lhs = radial_integral(r, np.abs(v.values - V), N)**2
	rhs = 8.0 * radial_integral(r, V**(2.0 - g), N) * entropy(v, D)
	return CKCheck(lhs, rhs, bool(lhs <= rhs * (1.0 + 1e-8)))

def relative_error(v: RadialGridFunction, reference: Union[BarenblattSpec, float], q: float = np.inf) -> float:
	"""
	|| (v - B)/B ||_{L^q} with B the reference evaluated in v's frame (a bare D means V_D).

	q must exceed N(p-1)/p. For q = inf the grid supremum is returned, or np.inf when the fitted tail
	of the relative error grows.
	"""
	params = v.params
	p, N = params.p, params.N
	if not q > N * (p - 1.0) / p:
		raise ParameterError(f"q must exceed N(p-1)/p = {N * (p - 1.0) / p:.4f} (got {q})")
	if not isinstance(reference, BarenblattSpec):
		reference = BarenblattSpec(params, Stationary(float(reference)))
	t = v.frame.time
	if isinstance(reference.kind, Stationary) or isinstance(v.frame, SelfSimilar):
		B, _ = eval_VD(reference.D, v.grid, params)
	else:
		B, _ = eval_barenblatt(reference, t, v.grid)
	e = np.abs(v.values / B - 1.0)
	if np.isinf(q):
		a = tail_power(v.grid, e)
		if a is not None and a < -1e-2:
			logger.info(f"relative_error: relative error grows in the tail (power {-a:.3f})")
			return np.inf
		return float(np.max(e))
	return float(radial_integral(v.grid, e**q, N, what="relative error")**(1.0 / q))

def gn_interpolation_check(f: RadialGridFunction) -> GNCheck:
	''' ||f||_inf against ||f_r||_inf^{N/(N+1)} ||f||_1^{1/(N+1)}; the ratio estimates the constant C_N. '''
	N = f.params.N
	lhs = float(np.max(np.abs(f.values)))
	grad = float(np.max(np.abs(f.radial_derivative())))
	l1 = radial_integral(f.grid, np.abs(f.values), N)
	rhs = grad**(N / (N + 1.0)) * l1**(1.0 / (N + 1.0))
	return GNCheck(lhs, rhs, lhs / rhs if rhs > 0 else 0.0)
