import numpy as np
import pytest

from fast_plaplace.errors import ParameterError
from fast_plaplace.exponents import Params, beta, lambda_star
from fast_plaplace.stencils import radial_grid
from fast_plaplace.profiles import SelfSimilar, RadialGridFunction, stationary_grid, sandwich_flags
from fast_plaplace.solver import SolverConfig
from fast_plaplace.rates import (
  RateExperiment, RateTargets, fit_rate, rate_targets, entropy_rate_window, sandwich_datum, cylinder_thresholds,
  shifted_barenblatt_rates, weak_gronwall_check, relative_error_rate_experiment, very_fast_decay_experiment
)

PARAMS = Params(1.75, 3)

def test_fit_rate_exponential():
  t = np.linspace(0.0, 10.0, 41)
  fit = fit_rate(np.column_stack((t, 3.0 * np.exp(-2.0 * t))))
  assert fit.fitted_rate == pytest.approx(2.0)
  assert fit.intercept == pytest.approx(np.log(3.0))
  assert fit.r_squared == pytest.approx(1.0)
  assert fit.window == (1.0, np.inf) and np.all(fit.series[:, 0] >= 1.0)
  assert fit_rate(np.column_stack((t, np.exp(-t))), "exp", window=(None, 5.0)).fitted_rate == pytest.approx(1.0)

def test_fit_rate_power():
  t = np.logspace(0, 3, 20)
  fit = fit_rate(np.column_stack((t, 5.0 * t**-1.5)), "power")
  assert fit.mode == "power_in_t"
  assert fit.fitted_rate == pytest.approx(-1.5)
  assert fit.as_dict()["points"] == 20

def test_fit_rate_noisy():
  rng = np.random.default_rng(5)
  t = np.linspace(1.0, 8.0, 200)
  y = np.exp(-0.7 * t) * np.exp(1e-3 * rng.normal(size=t.size))
  fit = fit_rate(np.column_stack((t, y)))
  assert fit.fitted_rate == pytest.approx(0.7, abs=1e-2)
  assert 0.99 < fit.r_squared <= 1.0

def test_fit_rate_rejects_bad_series():
  t = np.linspace(1.0, 2.0, 5)
  with pytest.raises(ParameterError, match="at least"):
    fit_rate(np.column_stack((t, np.exp(-t))))
  t = np.linspace(1.0, 2.0, 20)
  with pytest.raises(ParameterError, match="positive"):
    fit_rate(np.column_stack((t, np.zeros(20))))
  with pytest.raises(ParameterError):
    fit_rate(np.column_stack((t, np.ones(20))), "linear")
  with pytest.raises(ParameterError):
    fit_rate(np.ones((20, 3)))

def test_rate_targets():
  targets = rate_targets(PARAMS)
  assert targets == RateTargets(pytest.approx(1.0), pytest.approx(2.0), pytest.approx(12.0), "eigenvalue")
  assert rate_targets(Params(1.6, 3)).label == "essential spectrum"
  assert rate_targets(Params(1.3, 3)) == RateTargets(None, None, None, "open")

def test_sandwich_datum():
  v = sandwich_datum(PARAMS, 2.0, 1.0, weight=0.3)
  flags = sandwich_flags(v, 2.0, 1.0)
  assert flags.lower and flags.upper and flags.derivative
  assert isinstance(v.frame, SelfSimilar)
  with pytest.raises(ParameterError):
    sandwich_datum(PARAMS, 1.0, 2.0)
  with pytest.raises(ParameterError):
    sandwich_datum(PARAMS, 2.0, 1.0, weight=1.5)

def test_cylinder_thresholds():
  th = cylinder_thresholds(0.1, 1.0, 0.5, 0.5, PARAMS, 0.5, 2.0)
  assert th.eps_under == pytest.approx(1.0 - 0.5**1.75)
  assert th.eps_over == pytest.approx(2.0**1.75 - 1.0)
  assert th.rho_under > 0 and th.rho_over > 0
  assert th.T_under >= 1.0 and th.T_over >= 1.0
  tight = cylinder_thresholds(0.01, 1.0, 0.5, 0.5, PARAMS, 0.5, 2.0)
  assert tight.rho_under > th.rho_under and tight.rho_over > th.rho_over
  assert tight.T_under > th.T_under and tight.T_over > th.T_over
  with pytest.raises(ParameterError):
    cylinder_thresholds(0.9, 1.0, 0.5, 0.5, PARAMS, 0.5, 2.0)
  with pytest.raises(ParameterError):
    cylinder_thresholds(0.1, 1.0, 0.5, 0.5, PARAMS, 1.5, 2.0)

@pytest.mark.parametrize("params", [Params(1.75, 3), Params(1.8, 3)])
def test_shifted_barenblatt_rates(params):
  rates = shifted_barenblatt_rates(params, 1.0, 1.0, 1.0)
  assert rates.time_shift_rate == pytest.approx(-1.0, abs=2e-2)
  assert rates.space_shift_rate == pytest.approx(-beta(params), abs=2e-2)
  with pytest.raises(ParameterError):
    shifted_barenblatt_rates(params, 1.0, 0.0, 1.0)

def test_weak_gronwall():
  t = np.linspace(0.0, 10.0, 201)
  check = weak_gronwall_check(np.column_stack((t, np.exp(-2.0 * t))), 1.0)
  assert check.hypothesis and check.conclusion and check.holds
  assert check.windows == len(t)
  slow = weak_gronwall_check(np.column_stack((t, np.exp(-0.5 * t))), 1.0)
  assert not slow.hypothesis and slow.windows == 0 and slow.conclusion is None
  with pytest.raises(ParameterError):
    weak_gronwall_check(np.column_stack((t, np.exp(-t))), 0.0)

def test_rate_experiment_dict():
  exp = RateExperiment("converging", {"entropy": None}, rate_targets(PARAMS), None)
  assert exp.rates == {"entropy": None}
  assert exp.as_dict()["targets"]["linearized"] == pytest.approx(2.0)
  assert exp.as_dict()["monotone"] is None

def test_stationary_datum_is_labelled_stationary():
  v = stationary_grid(1.0, PARAMS, radial_grid())
  result = relative_error_rate_experiment(v, PARAMS, SolverConfig(), tau_end=1.0)
  assert result.label == "stationary"
  assert result.transfer_ok is None and all(f is None for f in result.fits.values())

def test_rate_experiment_preconditions():
  r = radial_grid()
  fat = RadialGridFunction(r, (1.0 + r)**-3, SelfSimilar(0.0), PARAMS)
  with pytest.raises(ParameterError, match="X_p"):
    relative_error_rate_experiment(fat, PARAMS, SolverConfig())
  with pytest.raises(ParameterError):
    relative_error_rate_experiment(stationary_grid(1.0, PARAMS, r), Params(1.8, 3), SolverConfig())
  v = stationary_grid(1.0, PARAMS, r)
  with pytest.raises(ParameterError):
    very_fast_decay_experiment(v, PARAMS, SolverConfig())
  slow = stationary_grid(1.0, Params(1.3, 3), r)
  with pytest.raises(ParameterError, match="bracket"):
    very_fast_decay_experiment(slow, Params(1.3, 3), SolverConfig())


def test_entropy_rate_window():
  lo, hi = entropy_rate_window(PARAMS)
  assert lo == pytest.approx(1.7) and hi == pytest.approx(2.3)
  params = Params(1.6, 3)
  assert lambda_star(params) == pytest.approx(0.504166, rel=1e-5)
  lo, hi = entropy_rate_window(params)
  assert lo == pytest.approx(0.8 * 2.0 * lambda_star(params)) and hi == pytest.approx(1.2 * 2.0 * lambda_star(params))
  assert entropy_rate_window(Params(1.3, 3)) is None

def test_weak_gronwall_late_windows():
  ## slow decay until t = 4, fast afterwards: the hypothesis only holds from t = 4 - 2 ln 1.5 on
  t = np.linspace(0.0, 10.0, 201)
  u = np.where(t <= 4.0, np.exp(-0.5 * t), np.exp(-2.0) * np.exp(-2.0 * (t - 4.0)))
  check = weak_gronwall_check(np.column_stack((t, u)), 1.0)
  assert not check.hypothesis and check.conclusion and check.holds
  expected = np.count_nonzero(t >= 4.0 - 2.0 * np.log(1.5))
  assert abs(check.windows - expected) <= 1
  mixed = np.exp(-2.0 * t) + 0.5 * np.exp(-3.0 * t)
  check = weak_gronwall_check(np.column_stack((t, mixed)), 1.0)
  assert check.hypothesis and check.holds and check.windows == len(t)

@pytest.mark.slow
@pytest.mark.parametrize("params, tau_end", [(Params(1.75, 3), 5.0), (Params(1.6, 3), 8.0)])
def test_entropy_rate_of_sandwich_datum(params, tau_end):
  v = sandwich_datum(params, 2.0, 1.0)
  result = relative_error_rate_experiment(v, params, SolverConfig(), tau_end=tau_end, sandwich=(2.0, 1.0))
  assert result.label == "converging"
  lo, hi = entropy_rate_window(params)
  assert lo <= result.rates["entropy"] <= hi
  ## the late half of the run stays under the ceiling too
  frame = result.trajectory.to_frame()
  late = fit_rate(frame[["time", "entropy"]].to_numpy(), window=(0.5 * tau_end, None))
  assert late.fitted_rate <= hi
  assert result.rates["sup_rel_err"] > 0

@pytest.mark.slow
def test_very_fast_decay_toward_selected_profile():
  params = Params(1.4, 3)
  v = sandwich_datum(params, 2.0, 1.0)
  result = very_fast_decay_experiment(v, params, SolverConfig(), tau_end=4.0, bracket=(1.0, 2.0))
  assert result.monotone is True and result.transfer_ok is None
  assert result.label == "decaying"
  assert result.rates["sup_rel_err"] > 0
  assert result.as_dict()["monotone"] is True
