"""Drone target search on a relative-offset grid.

Model, belief filter, solvers, baseline controllers, simulation harness,
parameter sweeps, and the text-file flight protocol.
"""

from .belief import Belief, FilterDegenerateError, entropy, most_likely, uniform_init, update
from .model import (
    ACTIONS,
    Action,
    EnvState,
    ModelParams,
    ObsSymbol,
    Outcome,
    RelState,
    fov_contains,
    obs_accuracy,
    obs_likelihood,
    rel_from_absolute,
    reward,
    state_index,
    state_unindex,
    transition_dist,
)
from .sim import EpisodeResult, EvalSummary, evaluate, run_episode, sample_start, step_env
from .solver import (
    AlphaVector,
    Policy,
    PolicyFormatError,
    SolverBudgetError,
    SolverConfig,
    load_policy,
    mdp_value_iteration,
    policy_action,
    policy_value,
    save_policy,
    solve_mdp,
    solve_pbvi,
    solve_qmdp,
)
from .sweep import SweepRecord, SweepSpec, run_sweep, write_csv, write_heatmap_svg

__all__ = [
    "ACTIONS",
    "Action",
    "AlphaVector",
    "Belief",
    "EnvState",
    "EpisodeResult",
    "EvalSummary",
    "FilterDegenerateError",
    "ModelParams",
    "ObsSymbol",
    "Outcome",
    "Policy",
    "PolicyFormatError",
    "RelState",
    "SolverBudgetError",
    "SolverConfig",
    "SweepRecord",
    "SweepSpec",
    "entropy",
    "evaluate",
    "fov_contains",
    "load_policy",
    "mdp_value_iteration",
    "most_likely",
    "obs_accuracy",
    "obs_likelihood",
    "policy_action",
    "policy_value",
    "rel_from_absolute",
    "reward",
    "run_episode",
    "run_sweep",
    "sample_start",
    "save_policy",
    "solve_mdp",
    "solve_pbvi",
    "solve_qmdp",
    "state_index",
    "state_unindex",
    "step_env",
    "transition_dist",
    "uniform_init",
    "update",
    "write_csv",
    "write_heatmap_svg",
]
