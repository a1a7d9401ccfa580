"""Transfer operators, couplings and decay of correlations for circle maps
with a neutral fixed point and potentials below Hölder regularity."""

__version__ = "0.1.0"

from .grid import GridFunction, circle_distance
from .moduli import ModulusSpec, choose_r0, eval_modulus, half_ratio, holder_constant
from .maps import (MapModel, k_fold, pm_log, pomeau_manneville, tabulated_map,
                   forward, inverse_branches, contraction_fn, verify_branch_contraction)
from .transport import DiscreteMeasure, TransportPlan, wasserstein, w1_circle, dual_pushforward
from .kernel import (natural_pairing, coupled_trajectory, coupling_cost, flatness_series,
                     flatness_empirical, flatness_runs)
from .rpf import (ConvergenceError, transfer_apply, power_iteration, normalize_potential,
                  dual_fixed_point, rpf_triple, invariance_check)
from .decay import (DecayModel, DecayTrace, decay_time, fit_decay, contraction_bound_check,
                    measure_operator_decay, measure_wasserstein_decay, measure_wasserstein_decays,
                    measure_correlation_decay)
