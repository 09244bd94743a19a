import numpy as np
import pytest

from fast_plaplace.errors import ParameterError
from fast_plaplace.exponents import Params, p_c, p_Y, p_12
from fast_plaplace.stencils import radial_grid
from fast_plaplace.profiles import (
  Original, MassParam, RadialGridFunction, BarenblattSpec, barenblatt_grid, fde_barenblatt
)
from fast_plaplace.solver import SolverConfig, Trajectory
from fast_plaplace.transform import (
  transform_constants, phi_grid, theorem_support, u_to_phi, phi_to_u, barenblatt_correspondence,
  pseudo_barenblatt_correspondence, equivalence_residual, refinement_study
)

PARAMS = Params(1.75, 3)

def test_transform_constants():
  C = transform_constants(Params(1.5, 4))
  assert C.m == pytest.approx(0.5) and C.b == pytest.approx(2.0 / 3.0)
  assert C.D_const == pytest.approx(81.0 / 16.0)
  assert C.frak_a == pytest.approx(4.0 - C.n)
  assert transform_constants(Params(1.5, 3)).frakC_bar is None

def test_induced_grid():
  r = np.array([0.0, 1.0, 8.0])
  np.testing.assert_allclose(phi_grid(r, PARAMS), r**(7.0 / 6.0))

def test_theorem_support():
  assert theorem_support(PARAMS).case == "good range"
  assert theorem_support(Params(1.3, 3)).supported
  assert not theorem_support(Params(1.1, 3)).supported
  N = 8
  _, p2 = p_12(N)
  assert theorem_support(Params(0.5 * (p2 + p_c(N)), N)).case == "below p_c"
  assert theorem_support(Params(0.5 * (p_Y(N) + p2), N)).case == "below p_2"
  assert theorem_support(Params(0.5 * (1.0 + p_Y(N)), N)).case == "unsupported"

def test_barenblatt_correspondence():
  r = np.logspace(-2, 2, 50)
  for params in (PARAMS, Params(1.6, 3), Params(1.8, 5)):
    assert barenblatt_correspondence(params, 1.0, [0.5, 1.0, 2.0], r) <= 1e-8
  with pytest.raises(ParameterError):
    barenblatt_correspondence(PARAMS, 1.0, 1.0, [0.0, 1.0])

def test_pseudo_barenblatt_correspondence():
  r = np.logspace(-2, 2, 50)
  assert pseudo_barenblatt_correspondence(Params(1.3, 3), 1.0, 1.0, [0.0, 0.5, 0.9], r) <= 1e-8
  with pytest.raises(ParameterError):
    pseudo_barenblatt_correspondence(PARAMS, 1.0, 1.0, 0.5, r)

def test_u_to_phi_of_barenblatt():
  C = transform_constants(PARAMS)
  u = barenblatt_grid(BarenblattSpec(PARAMS, MassParam(1.0)), 2.0, radial_grid())
  phi = u_to_phi(u)
  assert isinstance(phi.frame, Original) and phi.frame.time == 2.0
  expected = fde_barenblatt(C.m, C.n, C.frakC, 2.0, phi.grid, PARAMS.N)
  np.testing.assert_allclose(phi.values[1:], expected[1:], rtol=1e-8)
  assert phi.values[0] == pytest.approx(expected[0], rel=1e-6)

def test_phi_to_u_inverts_u_to_phi():
  u = barenblatt_grid(BarenblattSpec(PARAMS, MassParam(1.0)), 1.0, radial_grid())
  back = phi_to_u(u_to_phi(u))
  np.testing.assert_allclose(back.grid, u.grid, rtol=1e-12)
  np.testing.assert_allclose(back.values[1:], u.values[1:], rtol=1e-4)

def test_u_to_phi_rejects_increasing_profile():
  r = radial_grid(1e-3, 1e2, 128)
  u = RadialGridFunction(r, np.exp(-(r - 1.0)**2), Original(0.0), PARAMS)
  with pytest.raises(ParameterError, match="nonincreasing"):
    u_to_phi(u)

def test_equivalence_residual_of_closed_forms():
  C = transform_constants(PARAMS)
  spec = BarenblattSpec(PARAMS, MassParam(1.0))
  r = radial_grid(1e-3, 1e2, 512)
  rho = phi_grid(r, PARAMS)
  times = [1.0, 2.0]
  u_snaps = [(t, barenblatt_grid(spec, t, r)) for t in times]
  phi_snaps = [(t, RadialGridFunction(rho, fde_barenblatt(C.m, C.n, C.frakC, t, rho, PARAMS.N), Original(t), PARAMS)) for t in times]
  report = equivalence_residual(Trajectory(u_snaps, [{}, {}]), Trajectory(phi_snaps, [{}, {}], "wfde"))
  assert report.max_discrepancy <= 1e-8
  with pytest.raises(ParameterError):
    equivalence_residual(Trajectory(u_snaps[:1], [{}]), Trajectory(phi_snaps, [{}, {}], "wfde"))

@pytest.mark.slow
def test_refinement_study_good_range():
  df = refinement_study(PARAMS, SolverConfig(dt=0.02), refinements=2, t_end=1.5)
  assert list(df.columns) == ["nodes", "h", "dt", "discrepancy", "supported"]
  assert list(df["nodes"]) == [257, 513]
  assert np.all(np.isfinite(df["discrepancy"]))
  assert df["discrepancy"].iloc[1] <= df["discrepancy"].iloc[0]
