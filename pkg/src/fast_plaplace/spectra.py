import logging
import numpy as np
from typing import *
from collections import namedtuple
from dataclasses import dataclass
from numpy.typing import ArrayLike
from scipy.sparse.linalg import eigsh, ArpackNoConvergence
from scipy.special import roots_legendre, roots_jacobi, logsumexp

from .errors import LabError, ParameterError, NonIntegrableTail
from .exponents import Params, p_M, integrability_flag, _require_good_range
from .profiles import RadialGridFunction, eval_VD
from .functionals import entropy, fisher
from .stencils import tridiagonal, radial_grid, radial_integral, radial_derivative

logger = logging.getLogger(__name__)

QUAD_POINTS = 8
S_MIN = 1e-3
DOMAINS = (1e20, 1e30, 1e40)

DomainStudy = namedtuple("DomainStudy", ["domains", "eigenvalues", "extrapolated", "label"])
HPCheck = namedtuple("HPCheck", ["lhs", "rhs", "ratios", "max_ratio"])


@dataclass(frozen=True)
class SpectralProblem:
	'''
	Minimize int (g')^2 w_K ds / int g^2 w_M ds over g with int g w_M ds = 0, on a grid 0 = s_0 < ... < s_K.

	The weights are passed as their logarithms. Near the origin w_K ~ s^{a_K} and w_M ~ s^{a_M};
	the first cell integrates these powers exactly.
	'''
	grid: np.ndarray
	log_stiffness: Callable[[np.ndarray], np.ndarray]
	log_mass: Callable[[np.ndarray], np.ndarray]
	stiffness_origin_power: float = 0.0
	mass_origin_power: float = 0.0
	label: str = "eigenvalue"

	def __post_init__(self):
		s = np.array(self.grid, dtype=float)
		if s[0] != 0.0 or np.any(np.diff(s) <= 0):
			raise ParameterError("spectral grid must start at 0 and increase strictly")
		if len(s) < 65:
			raise ParameterError(f"spectral grid needs at least 64 cells (got {len(s) - 1})")
		if not (self.stiffness_origin_power > -1.0 and self.mass_origin_power > -1.0):
			raise ParameterError("weights must be integrable at the origin")
		s.flags.writeable = False
		object.__setattr__(self, "grid", s)


@dataclass(frozen=True)
class SpectralResult:
	eigenvalue: float
	constant_eigenvalue: float
	grid: np.ndarray
	eigenvector: np.ndarray
	residual: float
	tail_fraction: float
	label: str

	def as_dict(self) -> dict:
		return {
			"eigenvalue": self.eigenvalue, "constant_eigenvalue": self.constant_eigenvalue,
			"residual": self.residual, "tail_fraction": self.tail_fraction, "label": self.label,
			"nodes": len(self.grid) - 1, "domain": float(self.grid[-1]),
		}


def _cell_quadrature(s: np.ndarray, origin_power: float, q: int = QUAD_POINTS) -> Tuple[np.ndarray, np.ndarray]:
	''' Gauss nodes and log-weights per cell; Gauss-Jacobi with the factor s^a on the first cell. '''
	a, h = s[:-1], np.diff(s)
	xi, wi = roots_legendre(q)
	X = a[:, None] + 0.5 * h[:, None] * (xi[None, :] + 1.0)
	LW = np.log(0.5 * h)[:, None] + np.log(wi)[None, :]
	xj, wj = roots_jacobi(q, 0.0, origin_power)
	X[0] = 0.5 * h[0] * (xj + 1.0)
	LW[0] = (origin_power + 1.0) * np.log(0.5 * h[0]) + np.log(wj) - origin_power * np.log(X[0])
	return X, LW

def assemble(problem: SpectralProblem):
	"""
	P1 stiffness and mass matrices of the pencil, symmetrically scaled so the mass diagonal is one.

	Returns:
		(K, M, ell) with K, M sparse and ell the log of the unscaled mass diagonal; an eigenvector x of
		the scaled pencil corresponds to exp(-ell/2) x for the original one.
	"""
	s = problem.grid
	h = np.diff(s)
	XK, LK = _cell_quadrature(s, problem.stiffness_origin_power)
	XM, LM = _cell_quadrature(s, problem.mass_origin_power)
	lwK = LK + problem.log_stiffness(XK)
	lwM = LM + problem.log_mass(XM)
	pa = (s[1:, None] - XM) / h[:, None]
	pb = (XM - s[:-1, None]) / h[:, None]
	lMaa = logsumexp(lwM, b=pa * pa, axis=1)
	lMab = logsumexp(lwM, b=pa * pb, axis=1)
	lMbb = logsumexp(lwM, b=pb * pb, axis=1)
	lK = logsumexp(lwK, axis=1) - 2.0 * np.log(h)
	ell = np.logaddexp(np.append(lMaa, -np.inf), np.insert(lMbb, 0, -np.inf))
	if not np.all(np.isfinite(ell)):
		raise LabError("mass matrix has a vanishing diagonal entry; the weights underflow on this grid")
	l, r = ell[:-1], ell[1:]
	half = 0.5 * (l + r)
	Kd = np.zeros_like(ell)
	Kd[:-1] += np.exp(lK - l)
	Kd[1:] += np.exp(lK - r)
	K = tridiagonal(Kd, -np.exp(lK - half))
	Md = np.exp(np.append(lMaa, -np.inf) - ell) + np.exp(np.insert(lMbb, 0, -np.inf) - ell)
	M = tridiagonal(Md, np.exp(lMab - half))
	return K, M, ell

def solve_pencil(K, M, k: int = 4) -> Tuple[np.ndarray, np.ndarray]:
	''' The k eigenpairs of K x = lam M x closest to the shift -1 (the bottom of the spectrum), sorted. '''
	k = min(k, K.shape[0] - 2)
	try:
		vals, vecs = eigsh(K, k=k, M=M, sigma=-1.0, which="LM")
	except ArpackNoConvergence as e:
		raise LabError(f"shift-invert eigensolver did not converge ({len(e.eigenvalues)} of {k} pairs)") from e
	order = np.argsort(vals)
	return vals[order], vecs[:, order]

def solve_problem(problem: SpectralProblem, constrained: bool = True, k: int = 4) -> SpectralResult:
	'''
	Bottom of the spectrum of the pencil. With 'constrained' the mode of the constants is deflated,
	which is the minimum over mean-zero functions since eigenvectors are M-orthogonal.
	'''
	K, M, ell = assemble(problem)
	vals, vecs = solve_pencil(K, M, k)
	c = np.exp(0.5 * (ell - ell.max()))
	Mc = M @ c
	norms = np.sqrt(np.einsum("ij,ij->j", vecs, M @ vecs))
	overlap = np.abs(vecs.T @ Mc) / (np.sqrt(c @ Mc) * norms)
	i0 = int(np.argmax(overlap))
	if overlap[i0] < 1.0 - 1e-6:
		logger.warning(f"no eigenvector is close to the constants (best overlap {overlap[i0]:.6f})")
	j = min(i for i in range(len(vals)) if i != i0) if constrained else int(np.argmin(vals))
	lam, y = float(vals[j]), vecs[:, j]
	residual = float(np.linalg.norm(K @ y - lam * (M @ y)) / max(np.linalg.norm(K @ y), 1e-300))
	tail = slice(int(0.9 * len(y)), None)
	tail_fraction = float(np.sum(y[tail]**2) / np.sum(y**2))
	if constrained and tail_fraction > 0.1:
		logger.info(f"{tail_fraction:.1%} of the ground state sits in the last tenth of the grid: mass escapes to infinity")
	x = y * np.exp(-0.5 * (ell - ell.min()))
	x = x / np.max(np.abs(x))
	if x[np.argmax(np.abs(x))] < 0:
		x = -x
	return SpectralResult(lam, float(vals[i0]), problem.grid, x, residual, tail_fraction, problem.label)


## ---- the radial Hardy-Poincare problem ----

def radial_hp_problem(params: Params, nodes: int = 4096, L: float = DOMAINS[0], s_min: float = S_MIN, scale: float = 1.0) -> SpectralProblem:
	"""
	The radial problem in s with w_K = s^a (1+s^2)^{-(p-1)/(2-p)}, w_M = s^a (1+s^2)^{-1/(2-p)},
	a = 2N(p-1)/p - 1, on [0] + geomspace(s_min, L, nodes). 'scale' multiplies both weights.
	"""
	p, N = params.p, params.N
	if not integrability_flag(p, N):
		a = 2.0 * N * (p - 1.0) / p - 1.0
		raise NonIntegrableTail(2.0 / (2.0 - p) - a, 1.0, "Hardy-Poincare mass weight")
	if nodes < 64:
		raise ParameterError(f"grid_size must be at least 64 (got {nodes})")
	a = 2.0 * N * (p - 1.0) / p - 1.0
	e = 1.0 / (2.0 - p)
	lc = np.log(scale)
	s = np.concatenate(([0.0], np.geomspace(s_min, L, nodes)))
	label = "eigenvalue" if p > p_M(N) else "essential-spectrum estimate"
	return SpectralProblem(
		s,
		lambda x: lc + a * np.log(x) - (e - 1.0) * np.log1p(x * x),
		lambda x: lc + a * np.log(x) - e * np.log1p(x * x),
		a, a, label
	)

def hp_spectrum(params: Params, nodes: int = 4096, L: float = DOMAINS[0], s_min: float = S_MIN, constrained: bool = True) -> SpectralResult:
	_require_good_range(params, "hp_spectrum")
	return solve_problem(radial_hp_problem(params, nodes, L, s_min), constrained=constrained)

def hp_domain_study(params: Params, domains: Sequence[float] = DOMAINS, grid_size: int = 4096, s_min: float = S_MIN) -> DomainStudy:
	'''
	Constrained eigenvalues on growing domains [0, L] at fixed resolution in ln s, extrapolated to
	L = inf linearly in 1/(ln L)^2, the decay of the truncation error near an essential threshold.
	'''
	_require_good_range(params, "hp_domain_study")
	base = np.log(domains[0] / s_min)
	lams = []
	for L in domains:
		nodes = max(64, int(round(grid_size * np.log(L / s_min) / base)))
		res = hp_spectrum(params, nodes, L, s_min)
		lams.append(res.eigenvalue)
		logger.debug(f"hp_domain_study: L={L:.3g}, {nodes} nodes, eigenvalue {res.eigenvalue:.10g}")
	lams = np.array(lams)
	if len(domains) >= 2:
		x = 1.0 / np.log(np.asarray(domains, dtype=float))**2
		extrapolated = float(np.polyfit(x, lams, 1)[1])
	else:
		extrapolated = float(lams[0])
	label = "eigenvalue" if params.p > p_M(params.N) else "essential-spectrum estimate"
	if label != "eigenvalue":
		logger.info(f"p={params.p} <= p_M: reporting the essential-spectrum estimate {extrapolated:.8g}")
	return DomainStudy(tuple(domains), lams, extrapolated, label)

def hp_optimal_constant(params: Params, grid_size: int = 4096, domains: Sequence[float] = DOMAINS) -> float:
	"""
	Optimal constant of the radial Hardy-Poincare problem in the variable s, to be compared with
	lambda_hp_radial. Above p_M it is the bottom eigenvalue on the first domain; at or below p_M the
	extrapolated threshold of the essential spectrum.
	"""
	if grid_size < 64:
		raise ParameterError(f"grid_size must be at least 64 (got {grid_size})")
	_require_good_range(params, "hp_optimal_constant")
	if params.p > p_M(params.N):
		return hp_spectrum(params, grid_size, domains[0]).eigenvalue
	return hp_domain_study(params, domains, grid_size).extrapolated

def hardy_poincare_constant(params: Params, eigenvalue: float) -> float:
	''' Converts an eigenvalue of the problem in s back to the constant of the weighted inequality in x. '''
	return params.p * eigenvalue / (4.0 * (2.0 - params.p))

def eigenfunction_in_r(result: SpectralResult, params: Params, D: float, r: ArrayLike) -> np.ndarray:
	'''
	The perturbation V_D^{1/(p-1)} g(s(r)), s^2 = (2-p)/(p D) r^{p/(p-1)}, of V_D carried by the
	ground state g, scaled so that sup |perturbation / V_D| = 1.
	'''
	r = np.asarray(r, dtype=float)
	V, _ = eval_VD(D, r, params)
	s = np.sqrt(params.k / D) * r**(0.5 * params.p_prime)
	if s[-1] > result.grid[-1]:
		logger.warning(f"r extends past the spectral domain (s={s[-1]:.3g} > {result.grid[-1]:.3g}); g is held constant there")
	g = np.interp(s, result.grid, result.eigenvector)
	pert = V**(1.0 / (params.p - 1.0)) * g
	return pert / np.max(np.abs(pert / V))


## ---- the general weighted inequality ----

def _general_condition(params: Params):
	p, N = params.p, params.N
	if not N < p / ((2.0 - p) * (p - 1.0)):
		raise ParameterError(f"the weighted Hardy-Poincare inequality needs N < p/((2-p)(p-1)) (N={N}, p={p})")

def hp_general_constant(params: Params, grid_size: int = 2048, L: float = 1e3, y_min: float = 1e-4) -> SpectralResult:
	"""
	Bottom of the mean-zero spectrum of int |phi'|^2 y^2 w / int phi^2 w, w = (1+y^{p'})^{-1/(2-p)},
	on [0, L]; C_HP >= 1/eigenvalue. The constant is not explicit, only estimated.
	"""
	_general_condition(params)
	N, pp, e = params.N, params.p_prime, 1.0 / (2.0 - params.p)
	y = np.concatenate(([0.0], np.geomspace(y_min, L, grid_size)))
	problem = SpectralProblem(
		y,
		lambda x: (N + 1.0) * np.log(x) - e * np.log1p(x**pp),
		lambda x: (N - 1.0) * np.log(x) - e * np.log1p(x**pp),
		N + 1.0, N - 1.0, "truncated estimate"
	)
	return solve_problem(problem)

def hp_general_check(params: Params, test_functions: Iterable, y: Optional[np.ndarray] = None) -> HPCheck:
	'''
	Both sides of int |phi - mean|^2 w <= C_HP int |phi'|^2 |y|^2 w, w = (1+|y|^{p'})^{-1/(2-p)}, for each
	radial test function (a callable of |y| or an array on y). The largest ratio lhs/rhs bounds C_HP from below.
	'''
	_general_condition(params)
	N, e = params.N, 1.0 / (2.0 - params.p)
	y = radial_grid(1e-4, 1e3, 4096) if y is None else np.asarray(y, dtype=float)
	w = (1.0 + y**params.p_prime)**(-e)
	W = radial_integral(y, w, N, tail="none")
	lhs, rhs, size = [], [], []
	for fn in test_functions:
		phi = np.asarray(fn(y) if callable(fn) else fn, dtype=float)
		mean = radial_integral(y, phi * w, N, tail="none") / W
		dphi = radial_derivative(y, phi)
		lhs.append(radial_integral(y, (phi - mean)**2 * w, N, tail="none"))
		rhs.append(radial_integral(y, dphi**2 * y**2 * w, N, tail="none"))
		size.append(radial_integral(y, phi**2 * w, N, tail="none"))
	lhs, rhs, size = np.array(lhs), np.array(rhs), np.array(size)
	## for constants lhs is rounding noise and rhs vanishes
	with np.errstate(divide="ignore", invalid="ignore"):
		ratios = np.where(lhs <= 1e-24 * np.maximum(size, 1e-300), 0.0, lhs / rhs)
	return HPCheck(lhs, rhs, ratios, float(np.max(ratios)) if len(ratios) else 0.0)


def rayleigh_quotient(v: RadialGridFunction, D: float) -> float:
	''' I[v | V_D] / E[v | V_D]; the entropy must be positive. '''
	E = entropy(v, D)
	if not E > 0:
		raise ParameterError(f"Rayleigh quotient needs a positive entropy (got {E:.3e})")
	return fisher(v, D) / E
