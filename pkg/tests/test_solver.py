import numpy as np
import pytest

from fast_plaplace.errors import ParameterError, SpecValidationError
from fast_plaplace.exponents import Params
from fast_plaplace.stencils import radial_grid
from fast_plaplace.profiles import (
  Original, SelfSimilar, MassParam, RadialGridFunction, BarenblattSpec, FrameMap,
  barenblatt_grid, stationary_grid, eval_VD, mass
)
from fast_plaplace.solver import (
  SolverConfig, Scheme, Boundary, Trajectory, DIAGNOSTIC_COLUMNS, evolve, evolve_cple, evolve_rcple, comparison_probe
)

PARAMS = Params(1.75, 3)

def test_config_defaults_and_enums():
  config = SolverConfig()
  assert config.scheme == Scheme.SemiImplicit and config.boundary == Boundary.NeumannOriginFarFieldProfileMatch
  assert SolverConfig(scheme="explicit").scheme == Scheme.Explicit
  assert SolverConfig(boundary="NeumannOriginZeroFlux").boundary == Boundary.NeumannOriginZeroFlux
  d = SolverConfig(dt=0.5).as_dict()
  assert d["scheme"] == "semi_implicit" and d["dt"] == 0.5

@pytest.mark.parametrize("kwargs, path", [
  (dict(dt=0.0), "solver.dt"),
  (dict(eps_reg=-1.0), "solver.eps_reg"),
  (dict(eps_mode="local"), "solver.eps_mode"),
  (dict(scheme="crank_nicolson"), "scheme"),
  (dict(max_newton=0), "solver.max_newton"),
])
def test_config_validation(kwargs, path):
  with pytest.raises(SpecValidationError) as info:
    SolverConfig(**kwargs)
  assert path in str(info.value)

def test_config_from_mapping():
  config = SolverConfig.from_mapping({"dt": "1e-3", "eps_reg": "1e-10", "snapshot_every": 0.5})
  assert config.dt == 1e-3 and config.eps_reg == 1e-10 and config.snapshot_every == 0.5
  with pytest.raises(SpecValidationError, match="solver.foo"):
    SolverConfig.from_mapping({"foo": 1})
  with pytest.raises(SpecValidationError, match="solver.dt"):
    SolverConfig.from_mapping({"dt": "small"})

def test_trajectory_invariants():
  r = radial_grid(1e-3, 1e2, 32)
  f = stationary_grid(1.0, PARAMS, r)
  traj = Trajectory([(0.0, f), (1.0, f)], [{"time": 0.0}, {"time": 1.0}], "rcple")
  assert len(traj) == 2 and traj.final is f
  assert traj.at(1.0) is f
  with pytest.raises(KeyError):
    traj.at(0.5)
  assert list(traj.to_frame().columns) == DIAGNOSTIC_COLUMNS
  with pytest.raises(AssertionError):
    Trajectory([(1.0, f), (0.0, f)], [{}, {}])

def test_evolve_rejects_bad_input():
  r = radial_grid(1e-3, 1e2, 64)
  v = stationary_grid(1.0, PARAMS, r)
  with pytest.raises(AssertionError):
    evolve("heat", v, SolverConfig(), 1.0)
  with pytest.raises(ParameterError):
    evolve_cple(v, SolverConfig(), 1.0)
  with pytest.raises(ParameterError):
    evolve_rcple(v, SolverConfig(), 0.0)
  u = RadialGridFunction(r, v.values, Original(0.0), PARAMS)
  with pytest.raises(ParameterError):
    evolve_cple(u, SolverConfig(), 1.0)

def test_extinction_time_bounds_the_run():
  params = Params(1.3, 3)
  r = radial_grid(1e-3, 1e2, 64)
  u = RadialGridFunction(r, np.exp(-r**2), Original(0.0), params)
  with pytest.raises(ParameterError, match="extinction"):
    evolve_cple(u, SolverConfig(), 2.0, fmap=FrameMap(params, 1.0))

def test_zero_datum_stays_zero():
  r = radial_grid(1e-3, 1e2, 64)
  v = RadialGridFunction(r, np.zeros(65), SelfSimilar(0.0), PARAMS)
  traj = evolve("rcple", v, SolverConfig(snapshot_every=0.25), 1.0)
  np.testing.assert_allclose(traj.times, [0.0, 0.25, 0.5, 0.75, 1.0])
  assert not np.any(traj.final.values)

def test_stationary_profile_is_stationary():
  v = stationary_grid(1.0, PARAMS, radial_grid())
  traj = evolve_rcple(v, SolverConfig(snapshot_every=0.5), 1.0, D=1.0)
  df = traj.to_frame()
  M = mass(v)
  np.testing.assert_allclose(df["mass"], M, rtol=1e-7)
  assert np.all(df["l1_err"] <= 1e-3 * M)
  assert isinstance(traj.final.frame, SelfSimilar) and traj.final.frame.time == pytest.approx(1.0)

def test_rescaled_entropy_decreases():
  r = radial_grid()
  V1, _ = eval_VD(2.0, r, PARAMS)
  V2, _ = eval_VD(1.0, r, PARAMS)
  v = RadialGridFunction(r, V1 + (V2 - V1) * np.exp(-r**2), SelfSimilar(0.0), PARAMS)
  traj = evolve_rcple(v, SolverConfig(snapshot_every=0.5), 2.0)
  df = traj.to_frame()
  np.testing.assert_allclose(df["mass"], df["mass"].iloc[0], rtol=1e-7)
  H = df["entropy"].to_numpy()
  assert np.all(np.isfinite(H)) and H[0] > 0
  assert np.all(np.diff(H) <= 1e-6 * H[0])
  assert np.all(df["fisher"] >= 0)

def test_comparison_is_preserved():
  r = radial_grid(1e-3, 1e2, 512)
  low = stationary_grid(2.0, PARAMS, r)
  high = RadialGridFunction(r, eval_VD(1.0, r, PARAMS)[0] * (1.0 + 0.2 * np.exp(-r**2)), SelfSimilar(0.0), PARAMS)
  report = comparison_probe(low, high, SolverConfig(snapshot_every=0.5), 1.0, D=1.0)
  assert report.relative_violation <= 1e-6
  with pytest.raises(ParameterError):
    comparison_probe(high, low, SolverConfig(), 1.0)

@pytest.mark.slow
def test_barenblatt_is_self_similar():
  spec = BarenblattSpec(PARAMS, MassParam(1.0))
  u0 = barenblatt_grid(spec, 1.0, radial_grid(1e-3, 1e3, 2048))
  traj = evolve_cple(u0, SolverConfig(snapshot_every=0.5), 3.0, reference=spec)
  df = traj.to_frame()
  assert np.all(df["l1_err"] <= 1e-3)
  np.testing.assert_allclose(df["mass"], 1.0, rtol=1e-3)
