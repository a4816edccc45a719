"""Bundled demo scenario: a hand-set ground-truth workload model and queue
configuration whose solved policies show the expected qualitative structure
(high fidelity at low queue and high workload belief, delegation only when
the high-workload belief is near certain and the queue is long).

Used by the CLI ``export`` subcommand, the live-session demo, and tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model_io
from .policy import (
    BeliefGrid,
    PolicyTable,
    QueueParams,
    RewardWeights,
    build_belief_mdp,
    discretize_observations,
    policy_structure_report,
    save_policy,
    value_iteration,
)
from .workload import (
    Action,
    DEFAULT_CHANNEL_STEPS,
    EmissionChannel,
    TaskTrace,
    WorkloadModel,
    sample_trajectory,
)

DEMO_GAMMA = 0.95


def paper_shaped_model() -> WorkloadModel:
    """Two-state ground truth with the qualitative emission structure of a
    trained operator model: detection drops sharply under high workload at
    normal fidelity but stays close to baseline at high fidelity; false
    alarms vanish in the normal state and are workload-driven otherwise;
    reaction times are slower and noisier under high workload."""
    g = EmissionChannel.gaussian
    pm = EmissionChannel.point_mass
    transitions = {
        Action.N: np.array([[0.90, 0.10], [0.08, 0.92]]),
        Action.H: np.array([[0.92, 0.08], [0.15, 0.85]]),
    }
    emissions = {
        Action.N: [
            (g(0.89, 0.04), pm(0.0), g(420.0, 70.0)),
            (g(0.52, 0.10), g(1.7, 0.45), g(1150.0, 260.0)),
        ],
        Action.H: [
            (g(0.84, 0.04), pm(0.0), g(480.0, 80.0)),
            (g(0.76, 0.07), g(1.7, 0.40), g(1000.0, 230.0)),
        ],
    }
    return WorkloadModel(
        num_states=2,
        transitions=transitions,
        emissions=emissions,
        initial=np.array([0.662, 0.338]),
    )


def demo_queue_params() -> QueueParams:
    # under-critical at normal fidelity, over-critical at high fidelity,
    # so the fidelity choice genuinely trades accuracy against congestion
    return QueueParams(
        arrival_rate=0.15, max_length=30, duration_high=10.0, duration_normal=10.0 / 3.0,
        wait_epoch=12.0,
    )


@dataclass
class DemoScenario:
    model: WorkloadModel = field(default_factory=paper_shaped_model)
    params: QueueParams = field(default_factory=demo_queue_params)
    weights: RewardWeights = field(default_factory=RewardWeights)
    grid: BeliefGrid = field(default_factory=BeliefGrid)
    gamma: float = DEMO_GAMMA
    channel_steps: tuple[float, float, float] = DEFAULT_CHANNEL_STEPS


def demo_scenario() -> DemoScenario:
    return DemoScenario()


def block_action_sequence(num_tasks: int = 48, block: int = 4,
                          high_first: bool = False) -> list[Action]:
    """Alternating fixed-fidelity blocks, the training-session schedule."""
    first, second = (Action.H, Action.N) if high_first else (Action.N, Action.H)
    out = []
    while len(out) < num_tasks:
        out.extend([first] * block)
        out.extend([second] * block)
    return out[:num_tasks]


def make_demo_dataset(
    num_traces: int = 200,
    num_tasks: int = 48,
    seed: int | None = 0,
    model: WorkloadModel | None = None,
) -> list[TaskTrace]:
    """Synthetic training sessions sampled from the demo ground truth.

    Half the sessions run the N-first block schedule and half the reversed
    one, mirroring a counterbalanced data-collection design.
    """
    model = model or paper_shaped_model()
    rng = np.random.default_rng(seed)
    traces = []
    for i in range(num_traces):
        actions = block_action_sequence(num_tasks, high_first=i % 2 == 1)
        trace, _ = sample_trajectory(model, actions, rng)
        trace.session_id = f"session-{i:04d}"
        traces.append(trace)
    return traces


def solve_demo_policy(num_actions: int = 2, scenario: DemoScenario | None = None) -> PolicyTable:
    scenario = scenario or demo_scenario()
    if num_actions == 2:
        action_set: tuple[Action, ...] = (Action.N, Action.H)
    elif num_actions == 3:
        action_set = (Action.N, Action.H, Action.D)
    else:
        raise ValueError("num_actions must be 2 or 3")
    table = discretize_observations(scenario.model, scenario.channel_steps)
    mdp = build_belief_mdp(
        scenario.model, table, scenario.params, scenario.weights, action_set, scenario.grid
    )
    return value_iteration(mdp, gamma=scenario.gamma, tol=1e-6).policy


def export_demo_bundle(outdir: str | Path, seed: int = 0, num_traces: int = 200,
                       static_dir: str | None = None) -> dict[str, Path]:
    """Write the demo model, synthetic dataset, both solved policies, and a
    ready-to-serve service config into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    scenario = demo_scenario()
    paths: dict[str, Path] = {}

    paths["model"] = outdir / "model.json"
    model_io.save_model(scenario.model, paths["model"])

    paths["dataset"] = outdir / "dataset.jsonl"
    model_io.write_traces(make_demo_dataset(num_traces, seed=seed), paths["dataset"])

    for n in (2, 3):
        policy = solve_demo_policy(n, scenario)
        paths[f"policy{n}"] = outdir / f"policy_{n}action.json"
        save_policy(policy, paths[f"policy{n}"])
        report = policy_structure_report(policy)
        paths[f"structure{n}"] = outdir / f"structure_{n}action.txt"
        paths[f"structure{n}"].write_text(report.render_text())

    config = {
        "model_path": "model.json",
        "policy_path": "policy_2action.json",
        "arrival_rate": scenario.params.arrival_rate,
        "max_queue_length": scenario.params.max_length,
        "duration_high": scenario.params.duration_high,
        "duration_normal": scenario.params.duration_normal,
        "wait_epoch": scenario.params.wait_epoch,
        "grid_step": scenario.grid.step,
        "mode": "enforced",
        "task_budget": 48,
        "port": 8750,
    }
    if static_dir is not None:
        config["static_dir"] = static_dir
    paths["service_config"] = outdir / "service_config.json"
    paths["service_config"].write_text(model_io.dumps_canonical(config))
    return paths
