"""Offline RL via weight-space behavior constraining.

Pipeline: generate (or ingest) a transition dataset, train a recurrent
dynamics-model ensemble with the overshooting loss, clone the behavior
policy, then search policy weights by particle swarm inside a per-weight
box around the clone, scoring candidates with conservative (min-over-
ensemble) model rollouts. Evaluation utilities cover true-environment
returns, percentile reporting, and rank aggregation.
"""

from .behavior import BCConfig, BehaviorClone, bc_action_mse, train_bc
from .data import (
    Dataset,
    HistoryWindow,
    Trajectory,
    extract_window,
    load_dataset,
    sample_windows,
    save_dataset,
    split,
)
from .dynamics import (
    DynamicsModel,
    Ensemble,
    Normalization,
    OvershootConfig,
    TrainConfig,
    overshoot_loss,
    rollout_conservative,
    train_ensemble,
    train_model,
    warmup_hidden,
)
from .env import (
    Action,
    EnvState,
    MiniIBConfig,
    Observable,
    baseline_policy,
    env_reset,
    env_step,
    epsilon_greedy,
    generate_dataset,
)
from .evaluation import (
    EvalReport,
    ScoreTable,
    average_rank,
    evaluate_policy,
    load_benchmark_table,
    percentile,
    standard_error,
    sweep_d,
)
from .exceptions import ConstraintViolation, NumericError, ValidationError, WsbcError
from .nn import AdamState, PolicyArch, PolicyWeights, adam_step, policy_forward
from .search import (
    ConstraintBox,
    FitnessSpec,
    SwarmConfig,
    calibrate_alpha,
    clip_to_box,
    evaluate_fitness,
    pso_step,
    ring_neighbors,
    wsbc_search,
)

__version__ = "0.1.0"
