"""Entropy-rate maximization over stationary block laws under linear observable constraints."""

from .core import (Alphabet, BlockLaw, ConditionalKernel, ContextMarginal, InvalidLawError, SupportFace,
                   block_law, block_law_of, context_marginal, is_stationary_consistent, kernel_of)
from .entropy import (conditional_mutual_information, entropy_gradient, entropy_rate, gap_fixed_r_block,
                      hessian_matrix)
from .constraints import (ConstraintSystem, FeatureSet, build_constraint_system, find_feasible_point,
                          local_feasible_continuation, marginal_features, mean_features, r_block_features,
                          tangent_space_basis)
from .closed_form import RBlockLaw, binary_fixed_mean_maximizer, iid_maximizer, markov_extension
from .solver import (KKTCertificate, SolveResult, SolverConfig, brute_force_maximizer, kernel_representation,
                     kkt_multipliers, maximize, uniqueness_diagnostic)
from .geometry import (LocalChart, canonical_chart, envelope_check, gap_quadratic_expansion_check,
                       null_directions, selector_jacobian)
from .realization import HiddenAction, RandomMapping, SamplePath, build_random_mapping, simulate, \
    simulate_with_hidden_action
from .empirical import (EmpiricalEstimate, consistency_experiment, empirical_block_law, empirical_maximizer,
                        empirical_targets)

__version__ = "0.1.0"
