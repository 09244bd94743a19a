import sys
import json
import logging
import argparse
import numpy as np
import pandas as pd
from typing import *
from pathlib import Path
from collections import namedtuple
from dataclasses import replace

from .errors import LabError, ParameterError, SolverError
from .exponents import Params, critical_exponents, exponent_table, exponent_atlas, classify_regime, fde_parameters
from .profiles import (
  RadialGridFunction, BarenblattSpec, MassParam, FreeParam, Original, SelfSimilar,
  barenblatt_grid, stationary_grid, eval_VD, fde_barenblatt
)
from .stencils import radial_grid
from .solver import SolverConfig, evolve
from .config import ExperimentSpec, load_spec, read_mapping, setup_logging
from .loaders import read_profile_csv, write_profile_csv, write_trajectory, read_trajectory, write_schema, write_summary
from . import rates

logger = logging.getLogger(__name__)

ExitReport = namedtuple("ExitReport", ["status", "label", "checks", "rates", "output"])

EXIT_OK, EXIT_ERROR, EXIT_INVARIANT = 0, 1, 2

## Snapshots per run when the spec leaves snapshot_every unset
DEFAULT_SNAPSHOTS = 50

## Round-off allowance between consecutive refinement levels
REFINE_SLACK = 0.1

RATE_COLUMNS = {"entropy": "entropy", "l1": "l1_err", "rel_sup": "sup_rel_err"}


## ---- experiment runner ----

def build_datum(spec: ExperimentSpec, r: np.ndarray) -> Tuple[RadialGridFunction, dict]:
  '''
  The initial datum of an experiment and the keyword arguments its equation's solver needs
  (reference profile, frame map, D, or the weighted exponents).
  '''
  params, d, eq = spec.params, spec.datum, spec.equation
  kind = d["kind"]
  if kind == "csv":
    f = read_profile_csv(d["path"], params)
    if eq == "rcple" and isinstance(f.frame, Original):
      f = RadialGridFunction(f.grid, f.values, SelfSimilar(f.frame.time), params, derivative=f.derivative)
    kwargs = {"D": spec.reference_D} if eq == "rcple" else {}
    if eq == "wfde":
      m, n, _ = fde_parameters(params)
      kwargs = {"m": m, "n": n}
    return f, kwargs
  if kind == "barenblatt":
    bs = BarenblattSpec(params, MassParam(d["M"]))
    return barenblatt_grid(bs, d["t0"], r), {"reference": bs}
  if kind == "pseudo":
    bs = BarenblattSpec(params, FreeParam(d["D"], d["T"]))
    return barenblatt_grid(bs, d["t0"], r), {"reference": bs, "fmap": bs.frame_map()}
  if kind == "fde":
    m, n, _ = fde_parameters(params)
    M, N = d["M"], params.N
    phi = fde_barenblatt(m, n, M, d["t0"], r, N)
    ref = lambda t, rho: fde_barenblatt(m, n, M, t, rho, N)
    return RadialGridFunction(r, phi, Original(d["t0"]), params), {"m": m, "n": n, "reference": ref}
  ## rescaled equation from here on
  D = spec.reference_D
  if kind == "stationary":
    return stationary_grid(d["D"], params, r), {"D": d["D"] if D is None else D}
  if kind == "sandwich":
    v0 = rates.sandwich_datum(params, d["D1"], d["D2"], d["weight"], r)
    if D is None and not classify_regime(params).good_range:
      from .functionals import adjust_D
      D = adjust_D(v0, bracket=(d["D2"], d["D1"]))
    return v0, {"D": D}
  if kind == "dilated":
    ## lam^N V_D(lam y) carries the mass of V_D
    lam, N = d["scale"], params.N
    V, dV = eval_VD(d["D"], lam * r, params)
    return RadialGridFunction(r, lam**N * V, SelfSimilar(0.0), params, derivative=lam**(N + 1) * dV), {"D": D}
  if kind == "perturbed":
    rng = np.random.default_rng(spec.seed)
    coef = rng.uniform(-1.0, 1.0, d["modes"])
    centers = rng.uniform(0.0, 5.0, d["modes"])
    bump = np.sum(coef[:, None] * np.exp(-(r[None, :] - centers[:, None])**2), axis=0)
    bump /= max(float(np.max(np.abs(bump))), 1e-300)
    V, _ = eval_VD(d["D"], r, params)
    return RadialGridFunction(r, V * (1.0 + d["amplitude"] * bump), SelfSimilar(0.0), params), {"D": D}
  raise ParameterError(f"unknown datum kind {kind!r}")

def _check(passed: bool, value: Optional[float], threshold: Optional[float], note: str = "") -> dict:
  out = {"passed": bool(passed), "value": None if value is None else float(value), "threshold": threshold}
  if note:
    out["note"] = note
  return out

def evaluate_checks(names: Sequence[str], frame: pd.DataFrame, params: Params, fits: Dict[str, Any]) -> Dict[str, dict]:
  ''' Pass/fail records of the requested invariants on a diagnostics frame. '''
  out = {}
  t = frame["time"].to_numpy()
  for name in names:
    if name == "mass_conserved":
      mass = frame["mass"].to_numpy()
      dev = float(np.max(np.abs(mass / mass[0] - 1.0)))
      out[name] = _check(dev <= 1e-3, dev, 1e-3)
    elif name == "entropy_monotone":
      E = frame["entropy"].to_numpy()
      if not np.all(np.isfinite(E)):
        out[name] = _check(False, None, None, "entropy undefined along the run")
        continue
      rise = float(np.max(np.diff(E), initial=0.0))
      out[name] = _check(rise <= 1e-10 * max(E[0], 1e-300), rise, 0.0)
    elif name == "entropy_production":
      E, I = frame["entropy"].to_numpy(), frame["fisher"].to_numpy()
      mid = 0.5 * (t[1:] + t[:-1])
      sel = mid >= 0.5
      dE = np.diff(E) / np.diff(t)
      Im = 0.5 * (I[1:] + I[:-1])
      if not np.any(sel) or not np.all(np.isfinite(dE[sel])) or not np.all(Im[sel] > 0):
        out[name] = _check(False, None, 0.05, "entropy or Fisher information unavailable")
        continue
      worst = float(np.max(np.abs(dE[sel] + Im[sel]) / Im[sel]))
      out[name] = _check(worst <= 0.05, worst, 0.05)
    elif name == "stationary":
      err = float(frame["sup_rel_err"].iloc[-1])
      out[name] = _check(err <= 1e-4, err, 1e-4)
    elif name == "self_similar":
      err = float(np.nanmax(frame["sup_rel_err"].to_numpy()))
      out[name] = _check(err <= 1e-2, err, 1e-2)
    elif name == "extinction":
      s = frame["sup"].to_numpy()
      ratio = float(s[-1] / s[0])
      out[name] = _check(ratio <= 5e-2, ratio, 5e-2)
    elif name == "entropy_rate":
      fit = fits.get("entropy")
      band = rates.entropy_rate_window(params)
      if band is None or fit is None:
        out[name] = _check(False, None, None, "no entropy rate or no target in this range")
        continue
      lo, hi = band
      out[name] = _check(lo <= fit.fitted_rate <= hi, fit.fitted_rate, [lo, hi])
    elif name == "transfer":
      a, b = fits.get("l1_err"), fits.get("sup_rel_err")
      if a is None or b is None:
        out[name] = _check(False, None, None, "rates unavailable")
        continue
      floor = 0.8 * (2.0 - params.p) / (params.N + 1.0) * a.fitted_rate
      out[name] = _check(b.fitted_rate >= floor, b.fitted_rate, floor)
  return out

def _label(spec: ExperimentSpec, frame: pd.DataFrame) -> str:
  l1 = frame["l1_err"].to_numpy()
  if spec.equation == "rcple" and np.all(np.isfinite(l1)):
    if np.all(l1 <= rates.NOISE_FLOOR * float(frame["mass"].iloc[0])):
      return "stationary"
    return "converging" if l1[-1] < l1[0] else "evolved"
  s = frame["sup"].to_numpy()
  return "extinct" if s[-1] <= 5e-2 * s[0] else "evolved"

def run(spec: Union[ExperimentSpec, Mapping, str, Path]) -> ExitReport:
  """
  Runs one experiment and writes its outputs: one CSV per snapshot, diagnostics.csv, schema.json and
  summary.json (label, fitted rates, invariant results, spec hash, build and exponent table).

  Returns:
    ExitReport with status 0 when every requested invariant passes, 2 when one fails and 1 when the
    solver failed (the partial trajectory is still written)
  """
  if isinstance(spec, (str, Path)):
    spec = load_spec(spec)
  elif not isinstance(spec, ExperimentSpec):
    spec = ExperimentSpec.from_mapping(spec)
  out = spec.output_dir()
  r = radial_grid(**spec.grid)
  u0, kwargs = build_datum(spec, r)
  config = spec.solver
  if config.snapshot_every is None:
    config = replace(config, snapshot_every=(spec.t_end - u0.frame.time) / DEFAULT_SNAPSHOTS)
  logger.info(f"experiment {spec.name}: {spec.equation} at p={spec.params.p}, N={spec.params.N}, datum {spec.datum['kind']}")
  status, error = EXIT_OK, None
  try:
    traj = evolve(spec.equation, u0, config, spec.t_end, **kwargs)
  except SolverError as e:
    logger.error(f"experiment {spec.name}: {e}")
    if e.trajectory is None:
      raise
    traj, status, error = e.trajectory, EXIT_ERROR, str(e)
  write_trajectory(traj, out)
  write_schema(out)
  frame = traj.to_frame()
  label = _label(spec, frame)
  fits = {}
  if spec.equation == "rcple" and label != "stationary":
    fits = rates.fit_columns(frame, ("entropy", "l1_err", "sup_rel_err"), (rates.INITIAL_LAYER, None))
  checks = evaluate_checks(spec.checks, frame, spec.params, fits)
  if status == EXIT_OK and not all(c["passed"] for c in checks.values()):
    status = EXIT_INVARIANT
  fitted = {k: (None if f is None else f.as_dict()) for k, f in fits.items()}
  results = {
    "name": spec.name, "label": label, "status": status, "error": error,
    "rates": fitted, "targets": rates.rate_targets(spec.params)._asdict(),
    "checks": checks, "spec": spec.as_dict(),
  }
  write_summary(out / "summary.json", spec.as_dict(), spec.params, results)
  logger.info(f"experiment {spec.name}: {label}, status {status}")
  return ExitReport(status, label, checks, {k: (None if f is None else f.fitted_rate) for k, f in fits.items()}, str(out))


## ---- subcommands ----

def _emit(df: pd.DataFrame, out: Optional[str]):
  if out is None:
    df.to_csv(sys.stdout, index=False, float_format="%.17g", lineterminator="\n")
  else:
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(out, index=False, float_format="%.17g", lineterminator="\n")

def _emit_json(obj: Any, out: Optional[str]):
  text = json.dumps(obj, indent=2, sort_keys=True, default=float)
  if out is None:
    print(text)
  else:
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(text + "\n")

def cmd_exponents(args) -> int:
  table = exponent_table(Params(args.p, args.dimension)) if args.p is not None else critical_exponents(args.dimension)
  if args.format == "json":
    _emit_json({**table.as_dict(), "atlas": exponent_atlas(args.dimension)}, None)
  elif args.format == "csv":
    _emit(pd.DataFrame([table.as_dict()]), None)
  else:
    for label, value in exponent_atlas(args.dimension):
      print(f"{label:>4}  {value:.15f}")
    for key, value in table.as_dict().items():
      if value is not None and key not in ("N", "p_c", "p_Y", "p_M", "p_D", "p_1", "p_2"):
        print(f"{key:>17}  {value}")
  return EXIT_OK

def cmd_profile(args) -> int:
  params = Params(args.p, args.N)
  r = radial_grid(args.r_min, args.r_max, args.nodes)
  if args.kind == "barenblatt":
    f = barenblatt_grid(BarenblattSpec(params, MassParam(args.M)), args.t, r)
  elif args.kind == "pseudo":
    f = barenblatt_grid(BarenblattSpec(params, FreeParam(args.D, args.T)), args.t, r)
  elif args.kind == "stationary":
    f = stationary_grid(args.D, params, r)
  else:
    m, n, _ = fde_parameters(params)
    f = RadialGridFunction(r, fde_barenblatt(m, n, args.M, args.t, r, params.N), Original(args.t), params)
  if args.out is not None:
    write_profile_csv(f, args.out)
  else:
    du = f.derivative if f.derivative is not None else np.full(len(f), np.nan)
    _emit(pd.DataFrame({"r": f.grid, "value": f.values, "derivative": du}), None)
  return EXIT_OK

def cmd_evolve(args) -> int:
  mapping = read_mapping(args.config)
  if args.equation is not None:
    mapping["equation"] = args.equation
  if args.t_end is not None:
    mapping["t_end"] = args.t_end
  if args.snapshot_every is not None:
    mapping["solver"] = {**(mapping.get("solver") or {}), "snapshot_every": args.snapshot_every}
  if args.out is not None:
    mapping["output"] = args.out
  report = run(ExperimentSpec.from_mapping(mapping))
  print(f"{report.label}: wrote {report.output}")
  return report.status

def cmd_entropy_track(args) -> int:
  from .functionals import entropy, fisher, relative_error
  traj = read_trajectory(args.trajectory)
  rows = []
  for t, v in traj.snapshots:
    rec = {"time": t, "entropy": np.nan, "fisher": np.nan, "sup_rel_err": np.nan}
    try:
      rec["entropy"], rec["fisher"] = entropy(v, args.D), fisher(v, args.D)
    except LabError as e:
      logger.info(f"entropy-track: functionals undefined at {t:.6g}: {e}")
    rec["sup_rel_err"] = relative_error(v, args.D)
    rows.append(rec)
  _emit(pd.DataFrame(rows, columns=["time", "entropy", "fisher", "sup_rel_err"]), args.out)
  return EXIT_OK

def cmd_transform_check(args) -> int:
  from .transform import refinement_study
  params = Params(args.p, args.N)
  config = SolverConfig(dt=args.dt, eps_mode="absolute", eps_reg=args.eps_reg)
  df = refinement_study(params, config, args.datum, args.refinements, t_end=args.t_end, nodes=args.nodes)
  _emit(df, args.out)
  return EXIT_OK if refinement_converges(df["discrepancy"].to_numpy()) else EXIT_INVARIANT

def refinement_converges(d: Sequence[float], slack: float = REFINE_SLACK) -> bool:
  ''' The finest discrepancy is below the coarsest, and no level grows by more than slack over the previous one. '''
  d = np.asarray(d, dtype=float)
  if not np.all(np.isfinite(d)):
    return False
  if len(d) < 2:
    return True
  return bool(d[-1] < d[0] and np.all(d[1:] <= (1.0 + slack) * d[:-1]))

def cmd_hp_spectrum(args) -> int:
  from .spectra import hp_spectrum, hp_domain_study, hardy_poincare_constant
  from .exponents import lambda_hp, lambda_hp_radial
  params = Params(args.p, args.N)
  history = []
  for nodes in (args.nodes // 4, args.nodes // 2, args.nodes):
    res = hp_spectrum(params, max(nodes, 64), args.domain)
    history.append({"nodes": max(nodes, 64), "eigenvalue": res.eigenvalue, "residual": res.residual})
  study = hp_domain_study(params, (args.domain, args.domain**1.5, args.domain**2), args.nodes)
  value = res.eigenvalue if study.label == "eigenvalue" else study.extrapolated
  report = {
    **res.as_dict(),
    "constant": hardy_poincare_constant(params, value),
    "closed_form": lambda_hp(params), "closed_form_radial": lambda_hp_radial(params),
    "history": history,
    "domain_study": {"domains": list(study.domains), "eigenvalues": list(study.eigenvalues), "extrapolated": study.extrapolated, "label": study.label},
  }
  _emit_json(report, args.out)
  return EXIT_OK

def _window(text: Optional[str]) -> Optional[Tuple[Optional[float], Optional[float]]]:
  if text is None:
    return None
  parts = text.split(",")
  if len(parts) != 2:
    raise ParameterError(f"window must read 'a,b' (got {text!r})")
  try:
    return tuple(None if s.strip() == "" else float(s) for s in parts)
  except ValueError:
    raise ParameterError(f"window bounds must be numbers (got {text!r})")

def cmd_rate_fit(args) -> int:
  df = pd.read_csv(args.diagnostics)
  col = RATE_COLUMNS[args.column]
  if col not in df.columns or "time" not in df.columns:
    raise ParameterError(f"{args.diagnostics} needs columns 'time' and {col!r}")
  fit = rates.fit_rate(df[["time", col]].to_numpy(), args.mode, _window(args.window))
  _emit_json(fit.as_dict(), None)
  return EXIT_OK

def cmd_experiment(args) -> int:
  specs = [load_spec(path) for path in args.spec]
  reports = rates.run_experiments(specs, args.jobs)
  for spec, rep in zip(specs, reports):
    failed = [k for k, c in rep.checks.items() if not c["passed"]]
    print(f"{spec.name}: {rep.label} (status {rep.status}){' failed: ' + ', '.join(failed) if failed else ''}")
  statuses = [rep.status for rep in reports]
  return EXIT_ERROR if EXIT_ERROR in statuses else max(statuses, default=EXIT_OK)

def build_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(prog="fast-plaplace", description="Numerical lab for the fast p-Laplace evolution equation.")
  parser.add_argument("-v", "--verbose", action="count", default=0)
  parser.add_argument("-q", "--quiet", action="store_true")
  sub = parser.add_subparsers(dest="command", required=True)

  p = sub.add_parser("exponents", help="critical exponents and derived constants")
  p.add_argument("--dimension", "-N", type=int, required=True)
  p.add_argument("--p", type=float, default=None)
  p.add_argument("--format", choices=["json", "csv", "table"], default="table")
  p.set_defaults(func=cmd_exponents)

  p = sub.add_parser("profile", help="tabulate a closed-form profile")
  p.add_argument("--kind", choices=["barenblatt", "pseudo", "stationary", "fde"], required=True)
  p.add_argument("--p", type=float, required=True)
  p.add_argument("--N", type=int, required=True)
  p.add_argument("--M", type=float, default=1.0)
  p.add_argument("--D", type=float, default=1.0)
  p.add_argument("--T", type=float, default=1.0)
  p.add_argument("--t", type=float, default=1.0)
  p.add_argument("--nodes", type=int, default=2048)
  p.add_argument("--r-min", type=float, default=1e-4)
  p.add_argument("--r-max", type=float, default=1e3)
  p.add_argument("--emit", choices=["csv"], default="csv")
  p.add_argument("--out", default=None)
  p.set_defaults(func=cmd_profile)

  p = sub.add_parser("evolve", help="evolve a datum described by an experiment file")
  p.add_argument("--equation", choices=["cple", "rcple", "wfde"], default=None)
  p.add_argument("--config", required=True)
  p.add_argument("--t-end", type=float, default=None)
  p.add_argument("--snapshot-every", type=float, default=None)
  p.add_argument("--out", default=None)
  p.set_defaults(func=cmd_evolve)

  p = sub.add_parser("entropy-track", help="entropy and Fisher information along a stored trajectory")
  p.add_argument("--trajectory", required=True)
  p.add_argument("--D", type=float, required=True)
  p.add_argument("--out", default=None)
  p.set_defaults(func=cmd_entropy_track)

  p = sub.add_parser("transform-check", help="grid refinement of the radial transform equivalence")
  p.add_argument("--p", type=float, required=True)
  p.add_argument("--N", type=int, required=True)
  p.add_argument("--datum", choices=["barenblatt", "sandwich"], default="barenblatt")
  p.add_argument("--refinements", type=int, default=3)
  p.add_argument("--t-end", type=float, default=None)
  p.add_argument("--nodes", type=int, default=257)
  p.add_argument("--dt", type=float, default=1e-2)
  p.add_argument("--eps-reg", type=float, default=1e-12)
  p.add_argument("--out", default=None)
  p.set_defaults(func=cmd_transform_check)

  p = sub.add_parser("hp-spectrum", help="radial Hardy-Poincare constant")
  p.add_argument("--p", type=float, required=True)
  p.add_argument("--N", type=int, required=True)
  p.add_argument("--nodes", type=int, default=4096)
  p.add_argument("--domain", type=float, default=1e20)
  p.add_argument("--out", default=None)
  p.set_defaults(func=cmd_hp_spectrum)

  p = sub.add_parser("rate-fit", help="fit a decay rate to a diagnostics column")
  p.add_argument("--diagnostics", required=True)
  p.add_argument("--column", choices=list(RATE_COLUMNS), default="entropy")
  p.add_argument("--mode", choices=["exp", "power"], default="exp")
  p.add_argument("--window", default=None)
  p.set_defaults(func=cmd_rate_fit)

  p = sub.add_parser("experiment", help="run experiment files")
  p.add_argument("--spec", nargs="+", required=True)
  p.add_argument("--jobs", type=int, default=1)
  p.set_defaults(func=cmd_experiment)
  return parser

def main(argv: Optional[Sequence[str]] = None) -> int:
  args = build_parser().parse_args(argv)
  setup_logging(logging.ERROR if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING))
  try:
    return args.func(args)
  except LabError as e:
    logger.error(str(e))
    print(f"error: {e}", file=sys.stderr)
    return EXIT_ERROR

if __name__ == "__main__":
  sys.exit(main())
