"""Parabolic orbits of perturbed homogeneous potentials.

Central configurations and their (BS) certificates, the renormalised action
on a graded mesh, Newton continuation from the homothetic parabola, and
reconstruction plus independent verification of the physical orbit.
"""

__version__ = "0.1.0"

from .exceptions import (ConeBreachError, ConfigError, ContractViolation, ConvergenceError,
                         DimensionError, DomainError, NotCentralConfigurationError,
                         ParabolicOrbitError, PositivityLostError, SolverError,
                         TrustRegionError)
from .core_model import (AnisotropicPotential, ConeRegion, KeplerPotential, MassMetric,
                         NBodyPotential, PerturbationSpec, PotentialSpec, RestrictedNHPotential,
                         ScaledPerturbation, ZeroPerturbation, check_compatible,
                         fd_derivative_check, homogeneity_identity_residuals, potential_eval)
from .central_config import (CentralConfiguration, CentralConfigurationFinder, cc_residual,
                             certify, check_bs, find_central_configuration,
                             tangent_hessian_spectrum)
from .funcspace import (Mesh, MeshedFunction, build_mesh, d12_norm, hardy_ratio,
                        pointwise_bound_check, stiffness_matrix)
from .transform import (ScalingParams, admissible_cone, cutoff_w, forcing_h,
                        initial_from_params, omega_from, params_from_initial, remainder_K,
                        select_t0, y_sigma_eval)
from .action_solver import (ActionProblem, SolveResult, assemble, coercivity_estimate,
                            empirical_epsilon_star, newton_continuation_solve,
                            smallest_generalized_eigenvalue)
from .orbit import (ParabolicOrbit, ParabolicOrbitSolver, VerificationReport,
                    lemma_bounds_report, reconstruct_orbit, verify_orbit)
from .applications import (HgonSpec, MovingCentres, Problem, hgon_bs_direct, hgon_bs_threshold,
                           hgon_closed_form_u, hgon_configuration, preset)
