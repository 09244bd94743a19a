from .__version__ import __version__
from .errors import LabError, ParameterError, EntropyUndefined, NonIntegrableTail, SolverError, SpecValidationError
from .exponents import (
  Params, Regime, RegimeTag, ExponentTable,
  p_c, p_Y, p_D, p_M, p_12, critical_exponents, is_critical, integrability_flag,
  gamma, beta, theta, fde_parameters, derived_constants, classify_regime,
  lambda_star, lambda_hp, lambda_hp_radial, lambda_ess, exponent_table, exponent_atlas
)
from .profiles import (
  Original, SelfSimilar, MassParam, FreeParam, Stationary, RadialGridFunction, BarenblattSpec, FrameMap,
  b1, b2, b1_closed_form, m_star, D_of_mass, mass_of_D, eval_VD, log_VD, eval_barenblatt, barenblatt_grid,
  stationary_grid, mass, xp_norm, to_selfsimilar, from_selfsimilar, mass_rescale,
  eval_UD, fde_barenblatt, fde_pseudo_barenblatt, decay_lemma_bound, sandwich_flags, gradient_decay_diagnostics
)
from .stencils import radial_grid, refine, radial_derivative, radial_integral
from .solver import SolverConfig, Scheme, Boundary, Trajectory, evolve, evolve_cple, evolve_rcple, evolve_wfde, comparison_probe
from .functionals import (
  entropy, fisher, lin_functionals, entropy_report, kappa_constants, c_pn, linearized_fisher_bound,
  divergence_weight, monotone_operator_gap, scalar_fisher_chain, relative_mass, adjust_D,
  csiszar_kullback_check, relative_error, gn_interpolation_check
)
from .transform import (
  transform_constants, theorem_support, u_to_phi, phi_to_u, barenblatt_correspondence,
  pseudo_barenblatt_correspondence, equivalence_residual, refinement_study
)
from .spectra import (
  SpectralProblem, assemble, solve_pencil, solve_problem, hp_spectrum, hp_domain_study, hp_optimal_constant,
  hardy_poincare_constant, eigenfunction_in_r, hp_general_constant, hp_general_check, rayleigh_quotient
)
from .rates import (
  RateFit, CylinderThresholds, fit_rate, rate_targets, sandwich_datum, cylinder_thresholds,
  shifted_barenblatt_rates, weak_gronwall_check, relative_error_rate_experiment,
  very_fast_decay_experiment, run_experiments
)
from .config import ExperimentSpec, load_spec, setup_logging
from .cli import run
