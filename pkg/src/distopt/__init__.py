"""Exact distributed first-order optimization over static networks."""

from .algorithms import (BSpec, DivergenceError, GenericB, ScaledIdentityB, ScaledWeightB, State, StepConfig,
                         Trajectory, WOverAlphaB, ZeroB, dgm_step, extra_step, generalized_step, harnessing_step,
                         init_state, max_step_theorem4, parse_b_spec, primal_dual_u_step, run, tune_b_prime,
                         tune_b_star)
from .netgraph import Graph, WeightMatrix, is_connected, metropolis_weights, random_geometric, spectral_info
from .objectives import (LogisticProblem, LogisticSpec, Problem, QuadraticProblem, constants_logistic,
                         generate_logistic_data, grad_local, grad_stacked, hessian_local, solve_reference)

__version__ = "0.1.0"
