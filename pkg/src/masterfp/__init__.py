"""Master Fictitious Play for finite mean field games.

Population-dependent policies that reach a Nash equilibrium from any initial
distribution, together with exact solvers, a numpy Q-network, transport
metrics and an experiment CLI.
"""

__version__ = "0.1.0"

from .core import (
    ActionSpace,
    Environment,
    PopulationPolicy,
    ShapeError,
    StateSpace,
    UniformPopulationPolicy,
    ValueTable,
    best_response,
    evaluate_policy,
    exploitability,
    induce_policy,
    rollout_flow,
    step_mean_field,
)
from .envs import (
    BeachBar2DConfig,
    DistributionSet,
    Exploration1DConfig,
    check_monotonicity,
    make_beach_bar_2d,
    make_exploration_1d,
    make_testing_set,
    make_training_set,
)
from .fictitious_play import (
    MasterPolicyBundle,
    average_exploitability,
    master_fictitious_play,
    rollout_mixture,
    solve_mixture_reward,
    solve_specialized_fp,
    solve_unconditioned,
)
from .metrics import GroundMetric, PerformanceMatrix, flow_distance, performance_matrices, wasserstein
from .qlearn import RLConfig, fit_q_exact, gradient_check, train_dqn
from .qnet import QNetwork

__all__ = [name for name in dir() if not name.startswith("_")]
