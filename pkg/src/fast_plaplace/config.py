import os
import json
import logging
import yaml
from typing import *
from pathlib import Path
from dataclasses import dataclass, field

from .errors import ParameterError, SpecValidationError
from .exponents import Params
from .solver import SolverConfig
from .stencils import R_MIN, R_MAX, NODES

OUTPUT_ENV = "FAST_PLAPLACE_OUTPUT"

EQUATIONS = ("cple", "rcple", "wfde")
DATUM_KINDS = {
  "cple": ("barenblatt", "pseudo", "csv"),
  "rcple": ("stationary", "sandwich", "dilated", "perturbed", "csv"),
  "wfde": ("fde", "csv"),
}
CHECKS = (
  "mass_conserved", "entropy_monotone", "entropy_production", "stationary",
  "self_similar", "extinction", "entropy_rate", "transfer",
)

## Fields each datum kind reads, with defaults (None = required)
_DATUM_FIELDS = {
  "barenblatt": {"M": 1.0, "t0": 1.0},
  "pseudo": {"D": 1.0, "T": 1.0, "t0": 0.0},
  "stationary": {"D": 1.0},
  "sandwich": {"D1": 2.0, "D2": 1.0, "weight": 0.5},
  "dilated": {"D": 1.0, "scale": 1.1},
  "perturbed": {"D": 1.0, "amplitude": 0.1, "modes": 4},
  "fde": {"M": 1.0, "t0": 1.0},
  "csv": {"path": None},
}

def setup_logging(level: Union[int, str] = logging.WARNING):
  ''' Configures the root handler once; later calls only change the level. '''
  root = logging.getLogger()
  if not root.handlers:
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s: %(message)s")
  root.setLevel(level)

def output_root() -> Path:
  return Path(os.environ.get(OUTPUT_ENV, "fast_plaplace_output"))

def _number(value, path: str, kind=float, positive: bool = False, nonnegative: bool = False):
  ## YAML 1.1 reads '1e-4' as a string, so numbers are coerced here
  if isinstance(value, bool):
    raise SpecValidationError(path, f"expected a number (got {value!r})")
  try:
    x = kind(value)
  except (TypeError, ValueError):
    raise SpecValidationError(path, f"expected a number (got {value!r})")
  if kind is int and float(value) != x:
    raise SpecValidationError(path, f"expected an integer (got {value!r})")
  if positive and not x > 0:
    raise SpecValidationError(path, f"must be positive (got {x})")
  if nonnegative and not x >= 0:
    raise SpecValidationError(path, f"must be nonnegative (got {x})")
  return x

def _section(mapping: Mapping, key: str) -> dict:
  sec = mapping.get(key) or {}
  if not isinstance(sec, Mapping):
    raise SpecValidationError(key, f"expected a mapping (got {type(sec).__name__})")
  return dict(sec)


@dataclass(frozen=True)
class ExperimentSpec:
  '''
  One experiment: the equation, (p, N), the initial datum, the grid, solver options, the invariants
  to check and where to write the outputs.

  as_dict() is the normalized mapping hashed into every summary.
  '''
  equation: str
  params: Params
  datum: Dict[str, Any]
  t_end: float
  solver: SolverConfig = field(default_factory=SolverConfig)
  grid: Dict[str, Any] = field(default_factory=lambda: {"r_min": R_MIN, "r_max": R_MAX, "nodes": NODES})
  checks: Tuple[str, ...] = ()
  reference_D: Optional[float] = None
  output: Optional[str] = None
  seed: int = 0
  name: str = "experiment"

  @classmethod
  def from_mapping(cls, mapping: Mapping[str, Any]) -> "ExperimentSpec":
    """
    Validates a raw mapping (parsed YAML or JSON). Every error names the dotted field path.
    """
    if not isinstance(mapping, Mapping):
      raise SpecValidationError("spec", "expected a mapping at the top level")
    known = {"name", "equation", "params", "datum", "grid", "solver", "t_end", "checks", "reference", "output", "seed"}
    for key in mapping:
      if key not in known:
        raise SpecValidationError(str(key), "unknown field")
    equation = str(mapping.get("equation", "rcple")).lower()
    if equation not in EQUATIONS:
      raise SpecValidationError("equation", f"must be one of {EQUATIONS} (got {equation!r})")
    pm = _section(mapping, "params")
    for key in ("p", "N"):
      if key not in pm:
        raise SpecValidationError(f"params.{key}", "required")
    try:
      params = Params(_number(pm["p"], "params.p"), _number(pm["N"], "params.N", int))
    except SpecValidationError:
      raise
    except ParameterError as e:
      raise SpecValidationError("params", str(e))
    datum = cls._validate_datum(_section(mapping, "datum"), equation)
    gm = _section(mapping, "grid")
    grid = {
      "r_min": _number(gm.get("r_min", R_MIN), "grid.r_min", positive=True),
      "r_max": _number(gm.get("r_max", R_MAX), "grid.r_max", positive=True),
      "nodes": _number(gm.get("nodes", NODES), "grid.nodes", int, positive=True),
    }
    if not grid["r_min"] < grid["r_max"]:
      raise SpecValidationError("grid", "need r_min < r_max")
    for key in gm:
      if key not in grid:
        raise SpecValidationError(f"grid.{key}", "unknown grid option")
    solver = SolverConfig.from_mapping(_section(mapping, "solver"))
    if "t_end" not in mapping:
      raise SpecValidationError("t_end", "required")
    t_end = _number(mapping["t_end"], "t_end", positive=True)
    checks = mapping.get("checks") or []
    if isinstance(checks, str):
      checks = [checks]
    for i, c in enumerate(checks):
      if c not in CHECKS:
        raise SpecValidationError(f"checks[{i}]", f"unknown check {c!r}; must be one of {CHECKS}")
    ref = _section(mapping, "reference")
    reference_D = None if ref.get("D") is None else _number(ref["D"], "reference.D", positive=True)
    seed = _number(mapping.get("seed", 0), "seed", int, nonnegative=True)
    output = mapping.get("output")
    return cls(equation, params, datum, t_end, solver, grid, tuple(checks), reference_D,
      None if output is None else str(output), seed, str(mapping.get("name", "experiment")))

  @staticmethod
  def _validate_datum(dm: dict, equation: str) -> dict:
    kind = str(dm.get("kind", DATUM_KINDS[equation][0])).lower()
    if kind not in DATUM_KINDS[equation]:
      raise SpecValidationError("datum.kind", f"equation {equation!r} accepts {DATUM_KINDS[equation]} (got {kind!r})")
    out = {"kind": kind}
    defaults = _DATUM_FIELDS[kind]
    for key in dm:
      if key != "kind" and key not in defaults:
        raise SpecValidationError(f"datum.{key}", f"unknown option for datum kind {kind!r}")
    for key, default in defaults.items():
      value = dm.get(key, default)
      if value is None:
        raise SpecValidationError(f"datum.{key}", "required")
      if key == "path":
        out[key] = str(value)
      elif key == "modes":
        out[key] = _number(value, f"datum.{key}", int, positive=True)
      elif key in ("t0", "weight"):
        out[key] = _number(value, f"datum.{key}", nonnegative=True)
      else:
        out[key] = _number(value, f"datum.{key}", positive=True)
    if kind == "sandwich" and not out["D1"] > out["D2"]:
      raise SpecValidationError("datum.D1", "sandwich needs D1 > D2")
    if kind == "sandwich" and out["weight"] > 1.0:
      raise SpecValidationError("datum.weight", "must lie in [0, 1]")
    if kind == "perturbed" and not out["amplitude"] < 1.0:
      raise SpecValidationError("datum.amplitude", "must be below 1 to keep the datum positive")
    if kind in ("barenblatt", "fde") and not out["t0"] > 0:
      raise SpecValidationError("datum.t0", "the Barenblatt datum is sampled at t0 > 0")
    return out

  def as_dict(self) -> dict:
    return {
      "name": self.name, "equation": self.equation,
      "params": {"p": self.params.p, "N": self.params.N},
      "datum": dict(self.datum), "grid": dict(self.grid), "solver": self.solver.as_dict(),
      "t_end": self.t_end, "checks": list(self.checks),
      "reference": {"D": self.reference_D}, "output": self.output, "seed": self.seed,
    }

  def output_dir(self) -> Path:
    return Path(self.output) if self.output is not None else output_root() / self.name


def read_mapping(path: Union[str, Path]) -> dict:
  ''' Parses a YAML (.yaml/.yml) or JSON (.json) experiment file without validating it. '''
  path = Path(path)
  if not path.exists():
    raise SpecValidationError("spec", f"no such file: {path}")
  with open(path, 'r') as fid:
    text = fid.read()
  try:
    mapping = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
  except (json.JSONDecodeError, yaml.YAMLError) as e:
    raise SpecValidationError("spec", f"cannot parse {path}: {e}")
  if not isinstance(mapping, Mapping):
    raise SpecValidationError("spec", f"{path} does not hold a mapping")
  mapping = dict(mapping)
  datum = mapping.get("datum")
  ## relative CSV paths are relative to the spec file
  if isinstance(datum, Mapping) and "path" in datum and not Path(str(datum["path"])).is_absolute():
    mapping["datum"] = {**datum, "path": str(path.parent / str(datum["path"]))}
  return mapping

def load_spec(path: Union[str, Path]) -> ExperimentSpec:
  return ExperimentSpec.from_mapping(read_mapping(path))
