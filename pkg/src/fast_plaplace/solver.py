import logging
import numpy as np
from enum import Enum
from typing import *
from collections import namedtuple
from dataclasses import dataclass, fields, asdict
from scipy.linalg import solve_banded
from tqdm import tqdm
from tqdm.contrib.logging import logging_redirect_tqdm

from .errors import ParameterError, SolverError, SpecValidationError, LabError
from .exponents import beta, is_critical, p_c, classify_regime
from .profiles import RadialGridFunction, BarenblattSpec, FrameMap, Original, SelfSimilar, Frame, eval_barenblatt, eval_VD
from .stencils import fv_geometry, to_banded, radial_derivative, omega

logger = logging.getLogger(__name__)

ComparisonReport = namedtuple("ComparisonReport", ["max_violation", "relative_violation", "violations"])

DIAGNOSTIC_COLUMNS = ["time", "mass", "sup", "sup_grad", "entropy", "fisher", "sup_rel_err", "l1_err"]

class Scheme(Enum):
	SemiImplicit = "semi_implicit"
	Explicit = "explicit"

class Boundary(Enum):
	NeumannOriginFarFieldProfileMatch = "profile_match"
	NeumannOriginZeroFlux = "zero_flux"

def _as_enum(cls, value):
	if isinstance(value, cls):
		return value
	for member in cls:
		if value in (member.value, member.name):
			return member
	raise SpecValidationError(cls.__name__.lower(), f"invalid value {value!r}; must be one of {[m.value for m in cls]}")


@dataclass(frozen=True)
class SolverConfig:
	'''
	Options of the radial time steppers.

	dt caps the adaptive step; eps_reg regularizes the singular flux, either relative to the local
	face value (eps_mode="relative") or as eps_reg (sup|u0_r| + 1) ("absolute").
	'''
	scheme: Scheme = Scheme.SemiImplicit
	dt: float = 1e-2
	eps_reg: float = 1e-8
	tol_newton: float = 1e-10
	max_newton: int = 30
	boundary: Boundary = Boundary.NeumannOriginFarFieldProfileMatch
	eps_mode: str = "relative"
	snapshot_every: Optional[float] = None
	max_steps: int = 1_000_000
	max_retries: int = 12
	dt_growth: float = 1.2
	dt_init: float = 1e-6
	extinction_fraction: float = 0.02
	max_clips: int = 1000
	progress: bool = False
	ell: float = 1.0

	def __post_init__(self):
		object.__setattr__(self, "scheme", _as_enum(Scheme, self.scheme))
		object.__setattr__(self, "boundary", _as_enum(Boundary, self.boundary))
		if not self.dt > 0:
			raise SpecValidationError("solver.dt", f"must be positive (got {self.dt})")
		if not self.eps_reg >= 0:
			raise SpecValidationError("solver.eps_reg", f"must be nonnegative (got {self.eps_reg})")
		if not self.tol_newton > 0:
			raise SpecValidationError("solver.tol_newton", f"must be positive (got {self.tol_newton})")
		if self.eps_mode not in ("relative", "absolute"):
			raise SpecValidationError("solver.eps_mode", f"must be 'relative' or 'absolute' (got {self.eps_mode!r})")
		if self.snapshot_every is not None and not self.snapshot_every > 0:
			raise SpecValidationError("solver.snapshot_every", "must be positive")
		if not (self.dt_growth >= 1.0 and self.dt_init > 0 and 0 < self.extinction_fraction < 1 and self.ell > 0):
			raise SpecValidationError("solver", "need dt_growth >= 1, dt_init > 0, 0 < extinction_fraction < 1 and ell > 0")
		for name in ("max_newton", "max_steps", "max_retries", "max_clips"):
			if int(getattr(self, name)) < 1:
				raise SpecValidationError(f"solver.{name}", "must be a positive integer")

	@classmethod
	def from_mapping(cls, mapping: Mapping[str, Any], prefix: str = "solver") -> "SolverConfig":
		known = {f.name: f for f in fields(cls)}
		kwargs = {}
		for key, value in (mapping or {}).items():
			if key not in known:
				raise SpecValidationError(f"{prefix}.{key}", "unknown solver option")
			kwargs[key] = value
		for key in ("dt", "eps_reg", "tol_newton", "dt_growth", "dt_init", "extinction_fraction", "ell", "snapshot_every"):
			if key in kwargs and kwargs[key] is not None:
				try:
					kwargs[key] = float(kwargs[key])
				except (TypeError, ValueError):
					raise SpecValidationError(f"{prefix}.{key}", f"expected a number (got {kwargs[key]!r})")
		return cls(**kwargs)

	def as_dict(self) -> dict:
		out = asdict(self)
		out["scheme"], out["boundary"] = self.scheme.value, self.boundary.value
		return out


@dataclass(frozen=True)
class Trajectory:
	snapshots: Tuple[Tuple[float, RadialGridFunction], ...]
	diagnostics: Tuple[Dict[str, float], ...]
	equation: str = "cple"

	def __post_init__(self):
		object.__setattr__(self, "snapshots", tuple(self.snapshots))
		object.__setattr__(self, "diagnostics", tuple(self.diagnostics))
		assert len(self.snapshots) == len(self.diagnostics), "One diagnostics record per snapshot"
		t = self.times
		assert np.all(np.diff(t) > 0), "Snapshot times must increase strictly"

	def __len__(self) -> int:
		return len(self.snapshots)

	@property
	def times(self) -> np.ndarray:
		return np.array([t for t, _ in self.snapshots])

	@property
	def final(self) -> RadialGridFunction:
		return self.snapshots[-1][1]

	def at(self, time: float, atol: float = 1e-9) -> RadialGridFunction:
		''' The snapshot stamped at 'time'. '''
		t = self.times
		i = int(np.argmin(np.abs(t - time)))
		if abs(t[i] - time) > atol * max(1.0, abs(time)):
			raise KeyError(f"No snapshot at time {time} (closest {t[i]})")
		return self.snapshots[i][1]

	def to_frame(self) -> "pd.DataFrame":
		import pandas as pd
		return pd.DataFrame(list(self.diagnostics), columns=DIAGNOSTIC_COLUMNS)


class _RadialOperator:
	'''
	Conservative vertex-centred discretization of r^{1-d} (r^{d-1} F)_r with F = flux(u_r, u) + drift r u.

	'law' is "plap" (regularized |s|^{p-2}s) or "fde" ((u^m)_r). The outer face carries either the
	profile-matching flux -rate(t) r_K u_K or zero total flux.
	'''
	def __init__(self, r: np.ndarray, d: float, law: str, exponent: float, drift: float, rate: Optional[Callable], eps_reg: float, eps_mode: str, u0: np.ndarray):
		assert law in ["plap", "fde"], f"Invalid flux law '{law}'"
		geo = fv_geometry(r, d)
		self.r, self.d, self.law, self.exponent, self.drift, self.rate = r, d, law, exponent, drift, rate
		self.A, self.h, self.vol, self.rf = geo.areas, geo.h, geo.volumes, geo.faces
		self.A_out = r[-1]**(d - 1.0)
		self.eps_reg, self.eps_mode = eps_reg, eps_mode
		self.eps2 = (eps_reg * (np.max(np.abs(radial_derivative(r, u0))) + 1.0))**2 * np.ones(len(r) - 1)
		self.update_eps(u0)

	def update_eps(self, u: np.ndarray):
		''' Lagged local regularization eps_face = eps_reg * mean(u) / r_face. '''
		if self.eps_mode == "relative":
			ub = 0.5 * (u[:-1] + u[1:])
			self.eps2 = np.maximum(self.eps_reg * ub / self.rf, 1e-150)**2

	def flux(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
		h = self.h
		if self.law == "plap":
			p = self.exponent
			s = (u[1:] - u[:-1]) / h
			q = s * s + self.eps2
			F = q**((p - 2.0) / 2.0) * s
			dF = q**((p - 4.0) / 2.0) * ((p - 1.0) * s * s + self.eps2)
			Fl, Fr = -dF / h, dF / h
		else:
			m = self.exponent
			up = np.maximum(u, 1e-300)
			um = up**m
			dum = m * up**(m - 1.0)
			F = (um[1:] - um[:-1]) / h
			Fl, Fr = -dum[:-1] / h, dum[1:] / h
		if self.drift:
			ub = 0.5 * (u[:-1] + u[1:])
			c = 0.5 * self.drift * self.rf
			F, Fl, Fr = F + self.drift * self.rf * ub, Fl + c, Fr + c
		return F, Fl, Fr

	def outer_flux(self, u: np.ndarray, t: float) -> Tuple[float, float]:
		if self.rate is None:
			return 0.0, 0.0
		rho = float(self.rate(t))
		return -rho * self.r[-1] * u[-1], -rho * self.r[-1]

	def __call__(self, u: np.ndarray, t: float, jacobian: bool = True):
		F, Fl, Fr = self.flux(u)
		Fb, dFb = self.outer_flux(u, t)
		AF = self.A * F
		net = np.zeros_like(u)
		net[:-1] += AF
		net[1:] -= AF
		net[-1] += self.A_out * Fb
		if not jacobian:
			return net
		diag = np.zeros_like(u)
		diag[:-1] += self.A * Fl
		diag[1:] -= self.A * Fr
		diag[-1] += self.A_out * dFb
		return net, diag, self.A * Fr, -self.A * Fl


def _newton_step(op: _RadialOperator, u_guess: np.ndarray, hist: np.ndarray, c0: float, dt: float, t_new: float, config: SolverConfig) -> Optional[np.ndarray]:
	''' Solves vol (c0 u + hist) = dt net(u) by damped Newton; returns None on failure. '''
	vol = op.vol
	u = u_guess.copy()
	floor = 1e-60 * max(np.max(np.abs(u_guess)), 1e-300)
	for it in range(config.max_newton):
		net, diag, up, lo = op(u, t_new)
		G = vol * (c0 * u + hist) - dt * net
		ab = to_banded(vol * c0 - dt * diag, -dt * up, -dt * lo)
		try:
			du = solve_banded((1, 1), ab, -G)
		except (ValueError, np.linalg.LinAlgError):
			return None
		if not np.all(np.isfinite(du)):
			return None
		lam = 1.0
		while np.any((u + lam * du < 0) & (u > 0)) and lam > 2.0**-6:
			lam *= 0.5
		u = u + lam * du
		if op.law == "fde":
			u = np.maximum(u, 0.0)
		err = np.max(np.abs(lam * du) / np.maximum(np.abs(u), floor))
		if it >= 1 and err <= config.tol_newton:
			return u
	return None

def _explicit_step(op: _RadialOperator, u: np.ndarray, dt: float, t: float, max_sub: int) -> Tuple[np.ndarray, int]:
	''' Forward Euler over [t, t+dt], subcycled under the diagonal stability bound. '''
	done, n_sub = 0.0, 0
	while done < dt * (1.0 - 1e-14):
		net, diag, _, _ = op(u, t + done)
		stable = 0.45 * np.min(op.vol / np.maximum(np.abs(diag), 1e-300))
		k = min(stable, dt - done)
		u = np.maximum(u + k * net / op.vol, 0.0)
		done += k
		n_sub += 1
		if n_sub > max_sub:
			raise SolverError(f"explicit scheme needs more than {max_sub} substeps (stable step {stable:.3g})")
	return u, n_sub

def _snapshot_targets(t0: float, t_end: float, every: Optional[float]) -> np.ndarray:
	if every is None:
		return np.array([t_end])
	k = np.arange(1, int(np.floor((t_end - t0) / every + 1e-9)) + 1)
	targets = t0 + k * every
	targets = targets[targets < t_end - 1e-12 * max(1.0, abs(t_end))]
	return np.append(targets, t_end)

def _integrate(op: _RadialOperator, u0: RadialGridFunction, t_end: float, config: SolverConfig, make_frame: Callable[[float], Frame], diagnose: Callable, equation: str, extinction_T: Optional[float] = None) -> Trajectory:
	t0 = u0.frame.time
	if not t_end > t0:
		raise ParameterError(f"t_end={t_end} must exceed the initial time {t0}")
	if extinction_T is not None and not t_end < extinction_T:
		raise ParameterError(f"t_end={t_end} must stay below the extinction time {extinction_T}")
	params, r = u0.params, u0.grid
	snaps, diags = [], []

	def record(t: float, values: np.ndarray):
		f = RadialGridFunction(r, values, make_frame(t), params)
		snaps.append((t, f))
		diags.append(diagnose(t, f))
		logger.debug(f"{equation}: snapshot at {t:.6g}")

	u = np.array(u0.values, dtype=float)
	record(t0, u)
	targets = _snapshot_targets(t0, t_end, config.snapshot_every)
	if not np.any(u):
		for t in targets:
			record(float(t), u)
		return Trajectory(snaps, diags, equation)

	t, j = t0, 0
	u_prev, dt_prev = None, None
	dt = min(config.dt_init, config.dt)
	steps, retries, clips = 0, 0, 0
	with logging_redirect_tqdm([logger]):
		with tqdm(total=float(t_end - t0), disable=not config.progress, desc=equation, unit="t") as pbar:
			while j < len(targets):
				target = targets[j]
				dt_try = min(dt, target - t)
				if extinction_T is not None:
					dt_try = min(dt_try, config.extinction_fraction * (extinction_T - t))
				if dt_prev is not None:
					dt_try = min(dt_try, 2.0 * dt_prev)
				landing = dt_try >= target - t - 1e-14 * max(1.0, abs(target))
				t_new = target if landing else t + dt_try
				op.update_eps(u)
				if config.scheme == Scheme.Explicit:
					u_new, _ = _explicit_step(op, u, t_new - t, t, config.max_steps)
				else:
					if u_prev is None:
						c0, hist = 1.0, -u
					else:
						w = (t_new - t) / dt_prev
						c0, hist = (1.0 + 2.0 * w) / (1.0 + w), -(1.0 + w) * u + w * w / (1.0 + w) * u_prev
					u_new = _newton_step(op, u, hist, c0, t_new - t, t_new, config)
					if u_new is None:
						retries += 1
						dt = 0.5 * (t_new - t)
						logger.info(f"{equation}: Newton failed at t={t:.6g}, retrying with dt={dt:.3g} ({retries}/{config.max_retries})")
						if retries > config.max_retries:
							raise SolverError(f"{equation}: Newton did not converge at t={t:.6g}", trajectory=Trajectory(snaps, diags, equation))
						continue
				sup = np.max(u_new)
				if np.min(u_new) < -1e-12 * sup:
					clips += 1
					logger.info(f"{equation}: clipped undershoot {np.min(u_new):.3e} at t={t_new:.6g}")
					if clips > config.max_clips:
						raise SolverError(f"{equation}: negative undershoots persisted ({clips} clips)", trajectory=Trajectory(snaps, diags, equation))
				u_new = np.maximum(u_new, 0.0)
				pbar.update(float(t_new - t))
				u_prev, u, dt_prev, t = u, u_new, t_new - t, t_new
				retries = 0
				dt = min(config.dt, dt * config.dt_growth)
				steps += 1
				if steps > config.max_steps:
					raise SolverError(f"{equation}: exceeded max_steps={config.max_steps}", trajectory=Trajectory(snaps, diags, equation))
				if landing:
					record(float(target), u)
					j += 1
	logger.info(f"{equation}: {steps} steps to t={t:.6g}, {clips} clipping events")
	return Trajectory(snaps, diags, equation)


## ---- diagnostics ----

def _reference_fn(reference) -> Optional[Callable[[float, np.ndarray], np.ndarray]]:
	if reference is None or callable(reference) and not isinstance(reference, BarenblattSpec):
		return reference
	if isinstance(reference, BarenblattSpec):
		return lambda t, r: eval_barenblatt(reference, t, r)[0]
	raise ParameterError(f"unsupported reference {reference!r}")

def _diagnoser(d: float, reference: Optional[Callable], functional_D: Optional[float] = None) -> Callable:
	def diagnose(t: float, f: RadialGridFunction) -> Dict[str, float]:
		r, u = f.grid, f.values
		vol = fv_geometry(r, d).volumes
		rec = {
			"time": t,
			"mass": omega(f.params.N) * float(np.dot(vol, u)),
			"sup": float(np.max(u)),
			"sup_grad": float(np.max(np.abs(radial_derivative(r, u)))),
			"entropy": np.nan, "fisher": np.nan, "sup_rel_err": np.nan, "l1_err": np.nan,
		}
		if functional_D is not None:
			from .functionals import entropy, fisher
			try:
				rec["entropy"], rec["fisher"] = entropy(f, functional_D), fisher(f, functional_D)
			except LabError as e:
				logger.debug(f"functionals undefined at t={t:.6g}: {e}")
		if reference is not None:
			B = reference(t, r)
			with np.errstate(divide="ignore", invalid="ignore"):
				rec["sup_rel_err"] = float(np.max(np.abs(u / B - 1.0)))
			rec["l1_err"] = omega(f.params.N) * float(np.dot(vol, np.abs(u - B)))
		return rec
	return diagnose


## ---- equations ----

def evolve_cple(u0: RadialGridFunction, config: SolverConfig, t_end: float, fmap: Optional[FrameMap] = None, reference=None) -> Trajectory:
	"""
	Evolves u_t = r^{1-N} (r^{N-1} |u_r|^{p-2} u_r)_r from u0 (stamped in the Original frame) to t_end.

	Parameters:
		u0: initial datum; its frame time is the start time
		config: solver options
		t_end: final time
		fmap: scale of the bracketing (pseudo-)Barenblatt; its log_rate drives the profile-matching
			far-field flux, and for p < p_c its T is the extinction time. Defaults to the Barenblatt
			rate beta/t in the good range.
		reference: BarenblattSpec or callable (t, r) -> values for the error diagnostics
	"""
	if not isinstance(u0.frame, Original):
		raise ParameterError("evolve_cple expects a datum in the Original frame")
	params = u0.params
	rate, T_ext = None, None
	if config.boundary == Boundary.NeumannOriginFarFieldProfileMatch:
		if fmap is not None:
			rate = fmap.log_rate
			T_ext = fmap.T if fmap.regime == "very_fast" else None
		elif is_critical(params):
			rate = lambda t: config.ell
		elif params.p > p_c(params.N):
			if not u0.frame.t > 0:
				raise ParameterError("profile matching from t = 0 needs an explicit FrameMap")
			b = beta(params)
			rate = lambda t: b / t
		else:
			raise ParameterError("profile matching for p < p_c needs the FrameMap of a pseudo-Barenblatt")
	op = _RadialOperator(u0.grid, params.N, "plap", params.p, 0.0, rate, config.eps_reg, config.eps_mode, u0.values)
	return _integrate(op, u0, t_end, config, Original, _diagnoser(params.N, _reference_fn(reference)), "cple", T_ext)

def evolve_rcple(v0: RadialGridFunction, config: SolverConfig, tau_end: float, D: Optional[float] = None, reference=None) -> Trajectory:
	'''
	Evolves the rescaled problem v_tau = r^{1-N} (r^{N-1} (|v_r|^{p-2} v_r + r v))_r to tau_end.

	Every stationary profile V_D carries zero total flux, so both boundary options close the outer face
	with zero flux. D selects the V_D used for entropy, Fisher and error diagnostics; in the good range
	it defaults to the D of equal mass.
	'''
	if not isinstance(v0.frame, SelfSimilar):
		raise ParameterError("evolve_rcple expects a datum in the SelfSimilar frame")
	params = v0.params
	good = classify_regime(params).good_range
	if D is None and good and np.any(v0.values):
		from .functionals import adjust_D
		D = adjust_D(v0)
		logger.info(f"rcple: selected D={D:.10g} of equal mass")
	functional_D = D if (D is not None and good and abs(params.p - 1.5) > 1e-12) else None
	ref = _reference_fn(reference)
	if ref is None and D is not None:
		ref = lambda t, r: eval_VD(D, r, params)[0]
	op = _RadialOperator(v0.grid, params.N, "plap", params.p, 1.0, None, config.eps_reg, config.eps_mode, v0.values)
	return _integrate(op, v0, tau_end, config, SelfSimilar, _diagnoser(params.N, ref, functional_D), "rcple")

def evolve_wfde(phi0: RadialGridFunction, m: float, n: float, config: SolverConfig, t_end: float, rescaled: bool = False, rate: Optional[Callable[[float], float]] = None, reference=None) -> Trajectory:
	"""
	Evolves the weighted fast-diffusion equation Phi_t = rho^{1-n} (rho^{n-1} (Phi^m)_rho)_rho in the real
	dimension n, or its rescaled form with the drift + rho Psi when 'rescaled' is set.

	The original equation closes the outer face with the flux -rate(t) rho_K Phi_K; the default rate
	theta/t is the one of the weighted Barenblatt (m > (n-2)/n, t > 0).
	"""
	if not (0.0 < m < 1.0 and n > 2.0):
		raise ParameterError(f"evolve_wfde needs 0 < m < 1 and n > 2 (got m={m}, n={n})")
	params = phi0.params
	flux_rate = None
	if not rescaled and config.boundary == Boundary.NeumannOriginFarFieldProfileMatch:
		if rate is not None:
			flux_rate = rate
		else:
			th = 1.0 / (2.0 - n * (1.0 - m))
			if not (th > 0 and phi0.frame.time > 0):
				raise ParameterError("the default far-field rate theta/t needs m > (n-2)/n and a positive start time")
			flux_rate = lambda t: th / t
	frame = SelfSimilar if rescaled else Original
	op = _RadialOperator(phi0.grid, n, "fde", m, 1.0 if rescaled else 0.0, flux_rate, config.eps_reg, config.eps_mode, phi0.values)
	return _integrate(op, phi0, t_end, config, frame, _diagnoser(n, _reference_fn(reference)), "wfde")

def evolve(equation: str, u0: RadialGridFunction, config: SolverConfig, t_end: float, **kwargs) -> Trajectory:
	assert isinstance(equation, str) and equation.lower() in ["cple", "rcple", "wfde"], f"Invalid equation '{equation}'; must be one of 'cple', 'rcple', or 'wfde'"
	equation = equation.lower()
	if equation == "cple":
		return evolve_cple(u0, config, t_end, **kwargs)
	elif equation == "rcple":
		return evolve_rcple(u0, config, t_end, **kwargs)
	return evolve_wfde(u0, config=config, t_end=t_end, **kwargs)

def comparison_probe(u0_low: RadialGridFunction, u0_high: RadialGridFunction, config: SolverConfig, t_end: float, equation: str = "rcple", **kwargs) -> ComparisonReport:
	''' Evolves both data and reports the largest positive part of low - high over all snapshots. '''
	if not np.all(u0_low.values <= u0_high.values):
		raise ParameterError("comparison_probe needs u0_low <= u0_high nodewise")
	low = evolve(equation, u0_low, config, t_end, **kwargs)
	high = evolve(equation, u0_high, config, t_end, **kwargs)
	viol = np.array([max(float(np.max(a.values - b.values)), 0.0) for (_, a), (_, b) in zip(low.snapshots, high.snapshots)])
	sup = max(float(np.max(b.values)) for _, b in high.snapshots)
	return ComparisonReport(float(np.max(viol)), float(np.max(viol)) / sup if sup > 0 else 0.0, viol)
