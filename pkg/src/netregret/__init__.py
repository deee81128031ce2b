"""Multi-agent online optimization over gossip networks.

Synchronous rounds on a fixed undirected graph: agents descend drifting
losses while a doubly-stochastic mixing matrix averages neighbors, and a
ledger accounts the composite regret (losses plus a network-disagreement
penalty) against fixed and per-round comparators, together with every
closed-form envelope the analysis provides.
"""

from .backend import ACTIVE as BACKEND
from .topology import (Graph, MixingMatrix, build_graph, metropolis_mixing,
                       read_edge_list, second_largest_eigenvalue, uniform_mixing)
from .losses import (Domain, LossFunction, LossSequence, best_fixed_strategy,
                     evaluate, gradient, make_drifting_sequence,
                     minimizer_per_round)
from .algorithms import (AgentState, DinocoResult, HindsightObjective,
                         StepSchedule, build_schedule, congd_step, dinoco_step,
                         ocgd_step, project_box, run_congd, run_dinoco, run_ocgd)
from .oracle import (OracleSpec, exponential_inverse_cdf, offline_minimize,
                     perturbation_matrix, sample_exponential, verify_oracle_call)
from .regret import (CompositeValue, RegretLedger, bound_envelope, build_ledger,
                     composite_value, consensus_envelope_series,
                     consensus_residual, sublinearity_slope, zeta_surrogate)
from .config import ConfigError, ExperimentConfig
from .harness import (dsgd_preset, k_sweep, run_experiment, run_single,
                      write_trace)

__version__ = "0.1.0"
