import json
import pytest

from fast_plaplace.errors import SpecValidationError
from fast_plaplace.exponents import Params
from fast_plaplace.solver import Scheme
from fast_plaplace.config import ExperimentSpec, OUTPUT_ENV, read_mapping, load_spec, output_root

BASE = {"equation": "rcple", "params": {"p": 1.75, "N": 3}, "datum": {"kind": "stationary", "D": 1.0}, "t_end": 1.0}

def test_minimal_spec_defaults():
  spec = ExperimentSpec.from_mapping(BASE)
  assert spec.params == Params(1.75, 3)
  assert spec.datum == {"kind": "stationary", "D": 1.0}
  assert spec.checks == () and spec.seed == 0 and spec.name == "experiment"
  d = spec.as_dict()
  assert d["params"] == {"p": 1.75, "N": 3} and d["solver"]["scheme"] == "semi_implicit"
  assert ExperimentSpec.from_mapping(d) == spec

def test_datum_defaults_per_kind():
  spec = ExperimentSpec.from_mapping({**BASE, "datum": {"kind": "sandwich"}})
  assert spec.datum == {"kind": "sandwich", "D1": 2.0, "D2": 1.0, "weight": 0.5}
  cple = ExperimentSpec.from_mapping({**BASE, "equation": "cple", "datum": {}})
  assert cple.datum == {"kind": "barenblatt", "M": 1.0, "t0": 1.0}

@pytest.mark.parametrize("patch, field", [
  ({"params": {"p": 2.5, "N": 3}}, "params"),
  ({"params": {"p": 1.75}}, "params.N"),
  ({"params": {"p": 1.75, "N": 2.5}}, "params.N"),
  ({"equation": "heat"}, "equation"),
  ({"datum": {"kind": "barenblatt"}}, "datum.kind"),
  ({"datum": {"kind": "stationary", "M": 1.0}}, "datum.M"),
  ({"datum": {"kind": "sandwich", "D1": 1.0, "D2": 2.0}}, "datum.D1"),
  ({"datum": {"kind": "csv"}}, "datum.path"),
  ({"grid": {"r_min": 1.0, "r_max": 0.5}}, "grid"),
  ({"grid": {"spacing": "log"}}, "grid.spacing"),
  ({"solver": {"dt": -1.0}}, "solver.dt"),
  ({"checks": ["stationary", "energy"]}, "checks[1]"),
  ({"t_end": 0.0}, "t_end"),
  ({"colour": "blue"}, "colour"),
])
def test_validation_names_the_field(patch, field):
  with pytest.raises(SpecValidationError) as info:
    ExperimentSpec.from_mapping({**BASE, **patch})
  assert info.value.field == field

def test_missing_t_end():
  mapping = dict(BASE)
  del mapping["t_end"]
  with pytest.raises(SpecValidationError, match="t_end"):
    ExperimentSpec.from_mapping(mapping)

def test_yaml_exponent_strings(tmp_path):
  path = tmp_path / "exp.yaml"
  path.write_text(
    "equation: rcple\n"
    "params: {p: 1.75, N: 3}\n"
    "datum: {kind: stationary, D: 1}\n"
    "solver: {dt: 1e-3, eps_reg: 1e-10}\n"
    "t_end: 2\n"
    "checks: [stationary, mass_conserved]\n"
  )
  spec = load_spec(path)
  assert spec.solver.dt == 1e-3 and spec.solver.eps_reg == 1e-10
  assert spec.solver.scheme == Scheme.SemiImplicit
  assert spec.t_end == 2.0 and spec.checks == ("stationary", "mass_conserved")

def test_json_spec_and_relative_csv_path(tmp_path):
  path = tmp_path / "exp.json"
  path.write_text(json.dumps({**BASE, "datum": {"kind": "csv", "path": "v0.csv"}}))
  mapping = read_mapping(path)
  assert mapping["datum"]["path"] == str(tmp_path / "v0.csv")
  assert load_spec(path).datum["path"] == str(tmp_path / "v0.csv")

def test_unreadable_spec(tmp_path):
  with pytest.raises(SpecValidationError):
    read_mapping(tmp_path / "missing.yaml")
  path = tmp_path / "list.yaml"
  path.write_text("- 1\n- 2\n")
  with pytest.raises(SpecValidationError):
    read_mapping(path)

def test_output_dir(tmp_path, monkeypatch):
  monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
  assert output_root() == tmp_path
  spec = ExperimentSpec.from_mapping({**BASE, "name": "run1"})
  assert spec.output_dir() == tmp_path / "run1"
  spec = ExperimentSpec.from_mapping({**BASE, "output": str(tmp_path / "elsewhere")})
  assert spec.output_dir() == tmp_path / "elsewhere"
