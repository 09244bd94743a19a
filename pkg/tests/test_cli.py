import io
import json
import numpy as np
import pandas as pd
import pytest
import yaml

from fast_plaplace.exponents import Params, p_c, p_M, lambda_hp
from fast_plaplace.cli import EXIT_OK, EXIT_ERROR, EXIT_INVARIANT, main, run, build_datum, evaluate_checks, refinement_converges
from fast_plaplace.config import ExperimentSpec
from fast_plaplace.stencils import radial_grid
from fast_plaplace.profiles import mass, stationary_grid
from fast_plaplace.rates import run_experiments, fit_rate
from fast_plaplace.spectra import hardy_poincare_constant

GRID = {"r_min": 1e-3, "r_max": 1e2, "nodes": 256}

def barenblatt_spec(tmp_path, checks=("mass_conserved",), name="bb"):
  return {
    "name": name, "equation": "cple", "params": {"p": 1.75, "N": 3},
    "datum": {"kind": "barenblatt", "M": 1.0, "t0": 1.0}, "t_end": 1.5,
    "grid": GRID, "solver": {"snapshot_every": 0.25}, "checks": list(checks),
    "output": str(tmp_path / name),
  }

def test_exponents_json(capsys):
  assert main(["exponents", "-N", "3", "--format", "json"]) == EXIT_OK
  out = json.loads(capsys.readouterr().out)
  assert out["p_c"] == pytest.approx(p_c(3)) and out["p_M"] == pytest.approx(p_M(3))
  assert [label for label, _ in out["atlas"]][:3] == ["1", "p_Y", "3/2"]

def test_exponents_table_with_p(capsys):
  assert main(["exponents", "-N", "3", "--p", "1.75"]) == EXIT_OK
  out = capsys.readouterr().out
  assert "lambda_star" in out and "p_c" in out

def test_invalid_parameters_exit_with_error(capsys):
  assert main(["exponents", "-N", "3", "--p", "2.5"]) == EXIT_ERROR
  assert "error:" in capsys.readouterr().err

def test_profile_stationary(capsys):
  assert main(["profile", "--kind", "stationary", "--p", "1.5", "--N", "3", "--D", "1", "--nodes", "16"]) == EXIT_OK
  df = pd.read_csv(io.StringIO(capsys.readouterr().out))
  assert list(df.columns) == ["r", "value", "derivative"]
  np.testing.assert_allclose(df["value"], 1.0 / (1.0 + df["r"]**3 / 3.0), rtol=1e-14)

def test_profile_to_file(tmp_path):
  out = tmp_path / "b.csv"
  assert main(["profile", "--kind", "barenblatt", "--p", "1.75", "--N", "3", "--nodes", "64", "--out", str(out)]) == EXIT_OK
  assert out.read_text().startswith("# p=1.75 N=3 frame=original time=1.0")

def test_rate_fit(tmp_path, capsys):
  t = np.linspace(0.0, 5.0, 51)
  path = tmp_path / "diagnostics.csv"
  pd.DataFrame({"time": t, "l1_err": 2.0 * np.exp(-1.5 * t)}).to_csv(path, index=False)
  assert main(["rate-fit", "--diagnostics", str(path), "--column", "l1", "--window", "0,"]) == EXIT_OK
  fit = json.loads(capsys.readouterr().out)
  assert fit["fitted_rate"] == pytest.approx(1.5) and fit["points"] == 51
  assert main(["rate-fit", "--diagnostics", str(path), "--column", "entropy"]) == EXIT_ERROR

def test_build_datum_kinds():
  r = radial_grid(1e-3, 1e2, 512)
  base = {"equation": "rcple", "params": {"p": 1.75, "N": 3}, "t_end": 1.0}
  dil = ExperimentSpec.from_mapping({**base, "datum": {"kind": "dilated", "D": 1.0, "scale": 1.2}})
  v, kwargs = build_datum(dil, r)
  assert kwargs == {"D": None}
  assert mass(v) == pytest.approx(mass(stationary_grid(1.0, dil.params, r)), rel=1e-3)
  pert = ExperimentSpec.from_mapping({**base, "datum": {"kind": "perturbed", "amplitude": 0.1}, "seed": 7})
  a, _ = build_datum(pert, r)
  b, _ = build_datum(pert, r)
  np.testing.assert_array_equal(a.values, b.values)
  V = stationary_grid(1.0, pert.params, r).values
  assert np.max(np.abs(a.values / V - 1.0)) == pytest.approx(0.1)

def test_run_cple_barenblatt(tmp_path):
  report = run(barenblatt_spec(tmp_path))
  assert report.status == EXIT_OK and report.label == "evolved"
  assert report.checks["mass_conserved"]["passed"]
  out = tmp_path / "bb"
  summary = json.loads((out / "summary.json").read_text())
  assert summary["label"] == "evolved" and summary["status"] == EXIT_OK
  assert len(summary["spec_hash"]) == 64
  assert (out / "schema.json").exists() and (out / "snapshot_0002.csv").exists()
  diag = pd.read_csv(out / "diagnostics.csv")
  np.testing.assert_allclose(diag["time"], [1.0, 1.25, 1.5])

def test_failed_invariant_sets_status(tmp_path):
  report = run(barenblatt_spec(tmp_path, checks=("mass_conserved", "extinction"), name="bb2"))
  assert report.status == EXIT_INVARIANT
  assert not report.checks["extinction"]["passed"]

def test_evolve_subcommand(tmp_path, capsys):
  cfg = tmp_path / "exp.yaml"
  cfg.write_text(yaml.safe_dump(barenblatt_spec(tmp_path)))
  assert main(["evolve", "--config", str(cfg), "--t-end", "1.25", "--out", str(tmp_path / "ev")]) == EXIT_OK
  assert capsys.readouterr().out.startswith("evolved")
  summary = json.loads((tmp_path / "ev" / "summary.json").read_text())
  assert summary["spec"]["t_end"] == 1.25

def test_entropy_track(tmp_path, capsys):
  spec = {
    "name": "st", "equation": "rcple", "params": {"p": 1.75, "N": 3}, "datum": {"kind": "stationary", "D": 1.0},
    "t_end": 0.5, "grid": GRID, "solver": {"snapshot_every": 0.25}, "output": str(tmp_path / "st"),
  }
  report = run(spec)
  assert report.status == EXIT_OK
  assert main(["entropy-track", "--trajectory", str(tmp_path / "st"), "--D", "1.0"]) == EXIT_OK
  df = pd.read_csv(io.StringIO(capsys.readouterr().out))
  assert list(df.columns) == ["time", "entropy", "fisher", "sup_rel_err"]
  assert df["entropy"].iloc[0] == pytest.approx(0.0, abs=1e-14)

def test_experiment_subcommand(tmp_path, capsys):
  paths = []
  for name in ("a", "b"):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(barenblatt_spec(tmp_path, name=name)))
    paths.append(str(path))
  assert main(["experiment", "--spec", *paths]) == EXIT_OK
  lines = capsys.readouterr().out.strip().splitlines()
  assert lines == ["a: evolved (status 0)", "b: evolved (status 0)"]

def test_run_experiments_keeps_order(tmp_path):
  specs = [ExperimentSpec.from_mapping(barenblatt_spec(tmp_path, name=n)) for n in ("x", "y")]
  reports = run_experiments(specs)
  assert [r.output for r in reports] == [str(tmp_path / "x"), str(tmp_path / "y")]

@pytest.mark.parametrize("rate, passed", [(0.9, False), (1.5, False), (1.75, True), (2.0, True), (2.25, True), (2.4, False)])
def test_entropy_rate_check_band(rate, passed):
  t = np.linspace(0.0, 5.0, 21)
  fit = fit_rate(np.column_stack((t, np.exp(-rate * t))), window=(0.0, None))
  frame = pd.DataFrame({"time": t})
  check = evaluate_checks(["entropy_rate"], frame, Params(1.75, 3), {"entropy": fit})["entropy_rate"]
  assert check["passed"] is passed
  assert check["threshold"] == [pytest.approx(1.7), pytest.approx(2.3)]
  undefined = evaluate_checks(["entropy_rate"], frame, Params(1.3, 3), {"entropy": fit})["entropy_rate"]
  assert not undefined["passed"] and "note" in undefined

def test_solver_failure_writes_partial_run(tmp_path):
  spec = barenblatt_spec(tmp_path, name="fail")
  spec["solver"] = {"snapshot_every": 0.25, "max_newton": 1, "tol_newton": 1e-300, "max_retries": 2}
  report = run(spec)
  assert report.status == EXIT_ERROR
  out = tmp_path / "fail"
  assert (out / "snapshot_0000.csv").exists() and (out / "diagnostics.csv").exists()
  summary = json.loads((out / "summary.json").read_text())
  assert summary["status"] == EXIT_ERROR and "Newton" in summary["error"]

def test_rate_fit_bad_window(tmp_path, capsys):
  t = np.linspace(0.0, 5.0, 51)
  path = tmp_path / "diagnostics.csv"
  pd.DataFrame({"time": t, "entropy": np.exp(-t)}).to_csv(path, index=False)
  assert main(["rate-fit", "--diagnostics", str(path), "--window", "1"]) == EXIT_ERROR
  assert "window" in capsys.readouterr().err
  assert main(["rate-fit", "--diagnostics", str(path), "--window", "a,2"]) == EXIT_ERROR
  assert "window" in capsys.readouterr().err

def test_refinement_converges():
  assert refinement_converges([1e-2, 4e-3, 4.1e-3])
  assert refinement_converges([1e-2])
  assert not refinement_converges([1e-2, 2e-2])
  assert not refinement_converges([1e-2, 4e-3, 8e-3])
  assert not refinement_converges([1e-2, np.nan])

def test_transform_check_subcommand(tmp_path):
  out = tmp_path / "refine.csv"
  argv = ["transform-check", "--p", "1.75", "--N", "3", "--refinements", "2", "--nodes", "65", "--t-end", "1.1", "--dt", "0.02", "--out", str(out)]
  status = main(argv)
  df = pd.read_csv(out)
  assert list(df.columns) == ["nodes", "h", "dt", "discrepancy", "supported"]
  assert list(df["nodes"]) == [65, 129]
  np.testing.assert_allclose(df["dt"], [0.02, 0.01])
  assert status == (EXIT_OK if refinement_converges(df["discrepancy"]) else EXIT_INVARIANT)

def test_hp_spectrum_subcommand(tmp_path):
  out = tmp_path / "hp.json"
  assert main(["hp-spectrum", "--p", "1.75", "--N", "3", "--nodes", "512", "--domain", "1e12", "--out", str(out)]) == EXIT_OK
  report = json.loads(out.read_text())
  assert [h["nodes"] for h in report["history"]] == [128, 256, 512]
  assert report["label"] == "eigenvalue" and report["eigenvalue"] > 0
  assert report["closed_form"] == pytest.approx(lambda_hp(Params(1.75, 3)))
  value = report["eigenvalue"] if report["domain_study"]["label"] == "eigenvalue" else report["domain_study"]["extrapolated"]
  assert report["constant"] == pytest.approx(hardy_poincare_constant(Params(1.75, 3), value))
