"""fidsel: fidelity-selection decision support for human-supervised queued search.

Learns a hidden-workload model from operator traces, compiles it with queue
dynamics into a discretized belief MDP, solves for the optimal fidelity
policy, and evaluates it in simulation or live browser-console sessions.
"""

__version__ = "0.1.0"

from .workload import (  # noqa: F401
    Action,
    EmConfig,
    EmissionChannel,
    FitReport,
    ObservationTriple,
    TaskTrace,
    TraceStep,
    WorkloadModel,
    em_fit,
    emission_likelihood,
    forward_filter,
    information_criteria,
    sample_trajectory,
    select_model,
)
from .policy import (  # noqa: F401
    BeliefGrid,
    BeliefMdp,
    BeliefTracker,
    PolicyTable,
    QueueParams,
    RewardWeights,
    belief_transition,
    belief_update,
    build_belief_mdp,
    discretize_observations,
    expected_reward,
    load_policy,
    policy_structure_report,
    queue_transition,
    save_policy,
    value_iteration,
)
from .model_io import load_model, read_traces, save_model, write_traces  # noqa: F401
from .simulate import (  # noqa: F401
    SimConfig,
    baseline_policy,
    compare_groups,
    perturb_transitions,
    run_batch,
    run_episode,
    sensitivity_sweep,
)
