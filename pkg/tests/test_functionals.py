import numpy as np
import pytest

from fast_plaplace.errors import EntropyUndefined, ParameterError
from fast_plaplace.exponents import Params, gamma
from fast_plaplace.stencils import radial_grid
from fast_plaplace.profiles import SelfSimilar, RadialGridFunction, stationary_grid, eval_VD, mass
from fast_plaplace.functionals import (
  phi, entropy_integrand, entropy, fisher, lin_functionals, entropy_report, kappa_constants, c_pn,
  linearized_fisher_bound, divergence_weight, monotone_operator_gap, scalar_fisher_chain, relative_mass,
  adjust_D, csiszar_kullback_check, relative_error, gn_interpolation_check
)

PARAMS = Params(1.75, 3)

def mixed_datum(params=PARAMS, D1=2.0, D2=1.0, r=None):
  ## Smooth datum squeezed between V_D1 and V_D2
  r = radial_grid() if r is None else r
  V1, _ = eval_VD(D1, r, params)
  V2, _ = eval_VD(D2, r, params)
  return RadialGridFunction(r, V1 + (V2 - V1) * np.exp(-r**2), SelfSimilar(0.0), params)

def test_phi():
  assert phi(0.0, 1.5) == 0.0
  np.testing.assert_allclose(phi([-4.0, 4.0], 1.5), [-2.0, 2.0])

def test_entropy_integrand_is_nonnegative():
  V = np.ones(2001)
  v = np.linspace(0.0, 5.0, 2001)
  for p in (1.6, 1.75, 1.9):
    g = gamma(p)
    assert np.all(entropy_integrand(v, V, g) >= -1e-15)

def test_entropy_integrand_series_branch():
  g = gamma(1.75)
  d = np.array([9.99e-4, 1.001e-3])
  e = entropy_integrand(1.0 + d, np.ones(2), g)
  exact = ((1.0 + d)**g - 1.0 - g * d) / (g * (g - 1.0))
  np.testing.assert_allclose(e, exact, rtol=1e-6)

def test_functionals_vanish_at_stationary_profile():
  v = stationary_grid(1.5, PARAMS, radial_grid())
  assert entropy(v, 1.5) == pytest.approx(0.0, abs=1e-14)
  assert abs(fisher(v, 1.5)) <= 1e-6
  E, Ig, I = lin_functionals(v, 1.5)
  assert E == pytest.approx(0.0, abs=1e-14) and I == pytest.approx(0.0, abs=1e-10)
  report = entropy_report(v, 1.5)
  assert all(report.finite_flags.values())
  assert set(report.as_dict()) == {"entropy", "lin_entropy", "fisher", "lin_fisher_gamma", "lin_fisher", "eta"}

def test_entropy_undefined_at_three_halves():
  params = Params(1.5, 3)
  v = stationary_grid(1.0, params, radial_grid(1e-3, 1e2, 64))
  with pytest.raises(EntropyUndefined):
    entropy(v, 1.0)
  with pytest.raises(EntropyUndefined):
    c_pn(params)

def test_adjust_D_recovers_stationary_D():
  v = stationary_grid(1.3, PARAMS, radial_grid())
  assert adjust_D(v) == pytest.approx(1.3, rel=1e-8)
  assert adjust_D(v, bracket=(1.0, 2.0)) == pytest.approx(1.3, rel=1e-8)

def test_relative_mass_zero_after_adjust():
  v = mixed_datum()
  D = adjust_D(v)
  assert 1.0 < D < 2.0
  assert abs(relative_mass(v, D)) <= 1e-9 * mass(v)

def test_csiszar_kullback():
  v = mixed_datum()
  ck = csiszar_kullback_check(v, 1.0, adjust=True)
  assert ck.holds and 0 < ck.lhs <= ck.rhs
  with pytest.raises(ParameterError):
    csiszar_kullback_check(v, 1.0)

def test_csiszar_kullback_on_random_sandwiches():
  from fast_plaplace.rates import sandwich_datum
  rng = np.random.default_rng(2024)
  r = radial_grid()
  for _ in range(100):
    D2 = rng.uniform(0.5, 1.5)
    D1 = D2 * rng.uniform(1.2, 3.0)
    v = sandwich_datum(PARAMS, D1, D2, rng.uniform(0.1, 0.9), r)
    D = adjust_D(v, bracket=(D2, D1))
    assert entropy(v, D) >= 0
    ck = csiszar_kullback_check(v, D)
    assert ck.holds and ck.lhs <= ck.rhs * (1.0 + 1e-8)

def test_entropy_positive_and_fisher_nonnegative():
  v = mixed_datum()
  D = adjust_D(v)
  assert entropy(v, D) > 0
  assert fisher(v, D) > 0

def test_kappa_constants():
  g = gamma(PARAMS.p)
  k1, k2 = kappa_constants(PARAMS, 0.0)
  assert k1 == pytest.approx(1.0 / (1.0 - g)**2) and k2 == 0.0
  k1e, k2e = kappa_constants(PARAMS, 0.1)
  assert k1e > k1 and k2e > 0
  with pytest.raises(ParameterError):
    kappa_constants(PARAMS, 1.0)

def test_linearized_fisher_bound():
  r = radial_grid()
  V, _ = eval_VD(1.0, r, PARAMS)
  v = RadialGridFunction(r, V * (1.0 + 0.05 * np.exp(-r**2)), SelfSimilar(0.0), PARAMS)
  bound = linearized_fisher_bound(v, 1.0)
  assert bound.eps == pytest.approx(0.05, rel=1e-6)
  assert bound.lhs <= bound.rhs

def test_divergence_weight_matches_numerical_divergence():
  g = gamma(PARAMS.p)
  p, N = PARAMS.p, PARAMS.N
  for eta in (0.0, 0.5):
    f = lambda s: s**(1.0 - g) * (eta + (1.0 - g) * s**(2.0 - g))**(p - 2.0)
    s = np.linspace(0.2, 5.0, 25)
    h = 1e-5
    num = N * f(s) + s * (f(s + h) - f(s - h)) / (2.0 * h)
    np.testing.assert_allclose(divergence_weight(s, eta, PARAMS), num, rtol=1e-7)

@pytest.mark.parametrize("p", [1.2, 1.5, 1.8])
def test_monotone_operator_gap_nonnegative(p):
  rng = np.random.default_rng(3)
  xi, eta = rng.normal(size=(5000, 3)), rng.normal(size=(5000, 3))
  gap1, gap2 = monotone_operator_gap(xi, eta, p)
  assert np.all(gap1 >= -1e-12) and np.all(gap2 >= -1e-12)

def test_scalar_fisher_chain_is_ordered():
  rng = np.random.default_rng(4)
  xi, eta = rng.uniform(0.01, 10.0, 5000), rng.uniform(0.01, 10.0, 5000)
  for p in (1.3, 1.75):
    lo, mid, hi = scalar_fisher_chain(xi, eta, p)
    assert np.all(lo <= mid * (1.0 + 1e-10)) and np.all(mid <= hi * (1.0 + 1e-10))

def test_relative_error():
  v = stationary_grid(1.0, PARAMS, radial_grid())
  assert relative_error(v, 1.0) == pytest.approx(0.0, abs=1e-13)
  assert relative_error(v, 1.0, q=2.0) == pytest.approx(0.0, abs=1e-13)
  with pytest.raises(ParameterError):
    relative_error(v, 1.0, q=1.0)

def test_gn_interpolation_ratio():
  r = radial_grid()
  f = RadialGridFunction(r, np.exp(-r**2), SelfSimilar(0.0), PARAMS)
  check = gn_interpolation_check(f)
  assert check.lhs == pytest.approx(1.0)
  assert 0 < check.ratio < np.inf
