"""Large deviations for semilinear evolution equations with Poisson noise:
small-noise simulation, controlled skeletons, entropy rate functions and
empirical LDP / Laplace diagnostics."""

__version__ = "0.1.0"

from .measure import ControlFunction, MarkMeasure, TimeGrid, cost_LT, entropy_l, sublevel_check
from .prm import (DegenerateWeightError, PointPattern, SeededRng, likelihood_ratio, sample_controlled_prm,
                  sample_prm, sample_small_noise_prm)
from .semigroup import (SpectralGenerator, apply_semigroup, coeffs_to_field, field_to_coeffs, yosida,
                        yosida_convergence_report)
from .coefficients import (DiffusionSpec, DriftSpec, SamplerConfig, check_hypothesis3, check_linear_growth,
                           check_semimonotone, estimate_G_norms, eval_diffusion, eval_drift)
from .solver import (PathRecord, SkeletonNonConvergence, SolverConfig, System, energy_monitor, ito_monitor,
                     solve_mild, solve_skeleton)
from .ldp import (EventSpec, LaplaceFunctional, OptConfig, RateEstimate, estimate_rate, is_probability,
                  laplace_check, ldp_scan, mc_probability)
from .validators import (CountFunctional, ValidationReport, validate_system, validate_variational_representation,
                         validate_weak_convergence)
from .config import ConfigError, ExperimentConfig, load_config
