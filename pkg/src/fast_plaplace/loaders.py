import re
import json
import hashlib
import numpy as np
import pandas as pd
from typing import *
from pathlib import Path

from .errors import ParameterError, SpecValidationError
from .exponents import Params, exponent_table
from .profiles import RadialGridFunction, Original, SelfSimilar

## Every float written by this module round-trips exactly
FLOAT_FORMAT = "%.17g"

PROFILE_COLUMNS = ["r", "value", "derivative"]

SCHEMA = {
  "profile": {
    "r": "radius in the frame's native coordinate (x for t-frames, y for tau-frames)",
    "value": "profile value u (or v, Phi)",
    "derivative": "radial derivative d value / d r; empty when not carried",
  },
  "diagnostics": {
    "time": "t (original frame) or tau (self-similar frame)",
    "mass": "integral of the profile over R^N (real dimension n for the weighted flow)",
    "sup": "maximum of the profile",
    "sup_grad": "maximum of |d value / d r|",
    "entropy": "relative entropy to V_D; empty when undefined",
    "fisher": "relative Fisher information to V_D; empty when undefined",
    "sup_rel_err": "sup |value / reference - 1|",
    "l1_err": "L^1 distance to the reference",
  },
}

def _frame_of(kind: str, time: float):
  assert isinstance(kind, str) and kind.lower() in ['original', 'selfsimilar'], f"Invalid frame '{kind}'; must be 'original' or 'selfsimilar'."
  return Original(time) if kind.lower() == "original" else SelfSimilar(time)

def _frame_kind(f: RadialGridFunction) -> str:
  return "original" if isinstance(f.frame, Original) else "selfsimilar"

def _header(f: RadialGridFunction) -> str:
  return f"# p={float(f.params.p)!r} N={int(f.params.N)} frame={_frame_kind(f)} time={float(f.frame.time)!r}\n"

def write_profile_csv(f: RadialGridFunction, path: Union[str, Path]) -> Path:
  ''' Writes (r, value, derivative) with a one-line comment header carrying p, N and the frame. '''
  path = Path(path)
  path.parent.mkdir(parents=True, exist_ok=True)
  du = f.derivative if f.derivative is not None else np.full(len(f), np.nan)
  df = pd.DataFrame({"r": f.grid, "value": f.values, "derivative": du}, columns=PROFILE_COLUMNS)
  with open(path, 'w', newline='') as fid:
    fid.write(_header(f))
    df.to_csv(fid, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
  return path

def read_profile_csv(path: Union[str, Path], params: Optional[Params] = None, frame=None) -> RadialGridFunction:
  """
  Loads a radial profile written by write_profile_csv, or any CSV with columns r and value.

  params and frame default to the ones in the comment header; a profile without a header needs
  params, and is stamped Original(0) unless a frame is given. A grid not starting at 0 is extended
  by the value at its first node.
  """
  path = Path(path)
  meta = {}
  with open(path, 'r') as fid:
    first = fid.readline()
  if first.startswith("#"):
    meta = dict(re.findall(r'(\w+)=(\S+)', first))
  df = pd.read_csv(path, comment="#", float_precision="round_trip")
  if not {"r", "value"} <= set(df.columns):
    raise SpecValidationError("datum.path", f"{path} needs columns 'r' and 'value' (found {list(df.columns)})")
  if params is None:
    if not {"p", "N"} <= set(meta):
      raise SpecValidationError("datum.path", f"{path} has no (p, N) header; pass params explicitly")
    params = Params(float(meta["p"]), int(meta["N"]))
  if frame is None:
    frame = _frame_of(meta.get("frame", "original"), float(meta.get("time", 0.0)))
  r, u = df["r"].to_numpy(dtype=float), df["value"].to_numpy(dtype=float)
  du = df["derivative"].to_numpy(dtype=float) if "derivative" in df.columns else None
  if du is not None and np.any(np.isnan(du)):
    du = None
  if r[0] != 0.0:
    r, u = np.append(0.0, r), np.append(u[0], u)
    du = None if du is None else np.append(0.0, du)
  return RadialGridFunction(r, u, frame, params, derivative=du)

def write_trajectory(traj, out_dir: Union[str, Path]) -> Path:
  ''' One CSV per snapshot (snapshot_0000.csv, ...) plus diagnostics.csv and an index trajectory.json. '''
  from .solver import DIAGNOSTIC_COLUMNS
  out = Path(out_dir)
  out.mkdir(parents=True, exist_ok=True)
  files = []
  for i, (t, f) in enumerate(traj.snapshots):
    name = f"snapshot_{i:04d}.csv"
    write_profile_csv(f, out / name)
    files.append(name)
  traj.to_frame().to_csv(out / "diagnostics.csv", index=False, float_format=FLOAT_FORMAT, columns=DIAGNOSTIC_COLUMNS, lineterminator="\n")
  index = {"equation": traj.equation, "times": [float(t) for t in traj.times], "snapshots": files}
  with open(out / "trajectory.json", 'w') as fid:
    json.dump(index, fid, indent=2)
  return out

def read_trajectory(in_dir: Union[str, Path]):
  ''' Inverse of write_trajectory. '''
  from .solver import Trajectory
  src = Path(in_dir)
  index_path = src / "trajectory.json"
  if not index_path.exists():
    raise ParameterError(f"{src} is not a trajectory directory (no trajectory.json)")
  with open(index_path, 'r') as fid:
    index = json.load(fid)
  snaps = [(t, read_profile_csv(src / name)) for t, name in zip(index["times"], index["snapshots"])]
  diag = pd.read_csv(src / "diagnostics.csv", float_precision="round_trip")
  records = [{k: float(v) for k, v in row.items()} for row in diag.to_dict(orient="records")]
  return Trajectory(snaps, records, index.get("equation", "cple"))

def write_schema(out_dir: Union[str, Path]) -> Path:
  path = Path(out_dir) / "schema.json"
  path.parent.mkdir(parents=True, exist_ok=True)
  with open(path, 'w') as fid:
    json.dump(SCHEMA, fid, indent=2, sort_keys=True)
  return path

def canonical_json(mapping: Mapping) -> str:
  return json.dumps(mapping, sort_keys=True, separators=(",", ":"), default=_jsonable)

def spec_hash(mapping: Mapping) -> str:
  ''' sha256 of the canonical JSON of an experiment spec. '''
  return hashlib.sha256(canonical_json(mapping).encode("utf-8")).hexdigest()

def _jsonable(x):
  if isinstance(x, (np.floating, np.integer)):
    return x.item()
  if isinstance(x, np.bool_):
    return bool(x)
  if isinstance(x, np.ndarray):
    return x.tolist()
  if hasattr(x, "as_dict"):
    return x.as_dict()
  if hasattr(x, "_asdict"):
    return x._asdict()
  if hasattr(x, "value"):
    return x.value
  raise TypeError(f"Object of type {type(x).__name__} is not JSON serializable")

def _finite(x):
  ## NaN/inf are written as null so the summary stays strict JSON
  if isinstance(x, float) and not np.isfinite(x):
    return None
  if isinstance(x, dict):
    return {k: _finite(v) for k, v in x.items()}
  if isinstance(x, (list, tuple)):
    return [_finite(v) for v in x]
  return x

def write_summary(path: Union[str, Path], spec: Mapping, params: Params, results: Mapping) -> dict:
  ''' Writes the summary JSON: provenance (spec hash, build), the exponent table used and the results. '''
  from .__version__ import __version__
  summary = {
    "spec_hash": spec_hash(spec),
    "build": __version__,
    "exponents": exponent_table(params).as_dict(),
    **results,
  }
  summary = _finite(json.loads(json.dumps(summary, default=_jsonable)))
  path = Path(path)
  path.parent.mkdir(parents=True, exist_ok=True)
  with open(path, 'w') as fid:
    json.dump(summary, fid, indent=2, sort_keys=True)
  return summary
