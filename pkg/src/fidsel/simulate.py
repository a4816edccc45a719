"""Discrete-event simulator of the queued dual task with a synthetic operator.

An episode services a fixed number of tasks. Each task: the policy reads
(queue length, snapped belief), the true workload transitions under the
chosen fidelity, an observation triple is sampled from the ground truth,
the reward follows the realized observation, Poisson arrivals accrue over
the service time, and the engine belief is updated exactly as the policy
engine does (binned observations, grid snap).

Randomness is split into named streams (operator / arrivals / tasks /
policy / noise) derived from one seed, so a live session driven by a
scripted synthetic operator can reproduce an episode draw for draw.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats

from . import model_io
from .policy import (
    BeliefGrid,
    BeliefTracker,
    DiscreteObservationTable,
    PolicyTable,
    QueueParams,
    RewardWeights,
    discretize_observations,
)
from .workload import (
    Action,
    CHANNEL_RANGES,
    DEFAULT_CHANNEL_STEPS,
    ObservationTriple,
    WorkloadModel,
)

LOG_FORMAT_VERSION = 1


class DegenerateVarianceError(ValueError):
    """Both score groups are constant; the test statistic is undefined."""


@dataclass
class SimConfig:
    ground_truth: WorkloadModel
    params: QueueParams
    weights: RewardWeights = field(default_factory=RewardWeights)
    grid: BeliefGrid = field(default_factory=BeliefGrid)
    channel_steps: tuple[float, float, float] = DEFAULT_CHANNEL_STEPS
    engine_model: WorkloadModel | None = None  # defaults to the ground truth
    tasks_per_episode: int = 48
    episodes: int = 100
    seed: int = 0
    initial_queue: int = 1
    missed_cue_prob: float = 0.02
    reaction_noise_sigma: float = 0.0

    def __post_init__(self):
        if self.tasks_per_episode < 1:
            raise ValueError("tasks_per_episode must be at least 1")
        if self.episodes < 1:
            raise ValueError("episodes must be at least 1")
        if not 0.0 <= self.missed_cue_prob <= 1.0:
            raise ValueError("missed_cue_prob must be a probability")
        if self.reaction_noise_sigma < 0.0:
            raise ValueError("reaction noise sigma must be nonnegative")


@dataclass
class TaskRecord:
    index: int
    q_before: int
    true_workload: int
    belief_high: float
    action: Action
    observation: ObservationTriple | None
    reward: float
    cue_missed: bool = False
    belief_fallback: bool = False

    def to_json_dict(self) -> dict[str, Any]:
        obs = self.observation
        return {
            "task": self.index,
            "q": self.q_before,
            "workload": self.true_workload,
            "b_H": self.belief_high,
            "action": self.action.value,
            "o1": None if obs is None else obs.o1,
            "o2": None if obs is None else obs.o2,
            "o3": None if obs is None else obs.o3,
            "reward": self.reward,
            "cue_missed": self.cue_missed,
            "belief_fallback": self.belief_fallback,
        }


@dataclass
class EpisodeLog:
    records: list[TaskRecord]
    score: float
    wait_epochs: int
    saturated_arrivals: int
    belief_fallbacks: int
    final_queue: int
    final_belief: float


@dataclass
class BatchResult:
    scores: np.ndarray
    mean: float
    sd: float
    logs: list[EpisodeLog] = field(default_factory=list)


@dataclass
class GroupComparison:
    mean_a: float
    sd_a: float
    n_a: int
    mean_b: float
    sd_b: float
    n_b: int
    cohen_d: float
    t_statistic: float
    p_value: float


@dataclass
class SensitivityRow:
    kind: str  # "transition_pct" | "reaction_sigma"
    value: float
    mean_score: float
    abs_pct_reward_change: float


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class Policy:
    """Maps (queue length, snapped belief) to an action, maybe stochastically."""

    name = "policy"

    def reset(self) -> None:
        pass

    def act(self, q: int, b_h: float, rng: np.random.Generator) -> Action:
        raise NotImplementedError


class TablePolicy(Policy):
    def __init__(self, table: PolicyTable, name: str = "optimal"):
        self.table = table
        self.name = name

    def act(self, q, b_h, rng):
        label = self.table.lookup(q, b_h)
        if label == "wait":
            raise ValueError("policy consulted at an empty queue")
        return Action(label)


class AlwaysPolicy(Policy):
    def __init__(self, action: Action):
        self.action = action
        self.name = f"always_{action.value}"

    def act(self, q, b_h, rng):
        return self.action


class UniformRandomPolicy(Policy):
    name = "uniform_random"

    def __init__(self, actions: tuple[Action, ...] = (Action.N, Action.H)):
        self.actions = actions

    def act(self, q, b_h, rng):
        return self.actions[int(rng.integers(len(self.actions)))]


class StickyHumanPolicy(Policy):
    """Workload-conditioned preference with switch inertia.

    Mimics the observed human pattern: prefer high fidelity while the
    believed workload is low and normal fidelity once it is high, but
    repeat the previous action with probability ``inertia``.
    """

    name = "sticky_human"

    def __init__(self, inertia: float = 0.8, belief_threshold: float = 0.5):
        if not 0.0 <= inertia <= 1.0:
            raise ValueError("inertia must be a probability")
        self.inertia = inertia
        self.belief_threshold = belief_threshold
        self._last: Action | None = None

    def reset(self):
        self._last = None

    def _preferred(self, b_h: float) -> Action:
        return Action.H if b_h <= self.belief_threshold else Action.N

    def act(self, q, b_h, rng):
        choice = self._preferred(b_h)
        if self._last is not None and rng.random() < self.inertia:
            choice = self._last
        self._last = choice
        return choice


def baseline_policy(kind: str, **kwargs) -> Policy:
    """Factory for the comparison baselines."""
    if kind == "always_N":
        return AlwaysPolicy(Action.N)
    if kind == "always_H":
        return AlwaysPolicy(Action.H)
    if kind == "uniform_random":
        return UniformRandomPolicy(**kwargs)
    if kind == "sticky_human":
        return StickyHumanPolicy(**kwargs)
    raise ValueError(f"unknown baseline kind {kind!r}")


BASELINE_KINDS = ("always_N", "always_H", "uniform_random", "sticky_human")


# ---------------------------------------------------------------------------
# Episode dynamics
# ---------------------------------------------------------------------------


STREAM_NAMES = ("operator", "arrivals", "tasks", "policy", "noise")


def episode_streams(entropy) -> dict[str, np.random.Generator]:
    """Split one seed into the named independent randomness streams."""
    ss = entropy if isinstance(entropy, np.random.SeedSequence) else np.random.SeedSequence(entropy)
    children = ss.spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(c) for name, c in zip(STREAM_NAMES, children)}


def draw_task_setup(task_rng: np.random.Generator) -> tuple[float, int, int]:
    """Cue onset fraction, target count, and stream seed for one task."""
    onset = float(task_rng.uniform(0.25, 0.75))
    targets = int(task_rng.integers(2, 7))
    stream_seed = int(task_rng.integers(0, 2**31 - 1))
    return onset, targets, stream_seed


def sample_operator_observation(
    model: WorkloadModel, w: int, a: Action, rng: np.random.Generator
) -> ObservationTriple:
    vals = []
    for ch in range(3):
        c = model.channel(w, a, ch)
        x = rng.normal(c.mean, c.std) if c.kind == "gaussian" else c.point
        lo, hi = CHANNEL_RANGES[ch]
        vals.append(min(max(x, lo), hi))
    return ObservationTriple(*vals)


def run_episode(
    config: SimConfig,
    policy: Policy,
    entropy: int | np.random.SeedSequence | None = None,
    table: DiscreteObservationTable | None = None,
) -> EpisodeLog:
    """Simulate one episode of ``tasks_per_episode`` serviced tasks."""
    streams = episode_streams(config.seed if entropy is None else entropy)
    operator, arrivals = streams["operator"], streams["arrivals"]
    tasks, policy_rng, noise = streams["tasks"], streams["policy"], streams["noise"]

    gt = config.ground_truth
    engine_model = config.engine_model or gt
    table = table if table is not None else discretize_observations(
        engine_model, config.channel_steps
    )
    tracker = BeliefTracker(engine_model, table, config.grid)
    policy.reset()

    params = config.params
    L = params.max_length
    lam = params.arrival_rate
    q = min(config.initial_queue, L)
    w = int(operator.choice(gt.num_states, p=gt.initial))

    records: list[TaskRecord] = []
    score = 0.0
    waits = saturated = fallbacks = 0

    for t in range(config.tasks_per_episode):
        while q == 0:
            q = min(q + int(arrivals.poisson(lam * params.epoch)), L)
            waits += 1
        onset, _targets, _seed = draw_task_setup(tasks)
        q_before = q
        b_before = tracker.b_h
        a = policy.act(q, tracker.b_h, policy_rng)

        if a is Action.D:
            reward = config.weights.delegation_reward(q)
            q -= 1
            records.append(
                TaskRecord(t, q_before, w, b_before, a, None, reward)
            )
            score += reward
            continue

        w = int(operator.choice(gt.num_states, p=gt.transition(a)[w]))
        obs = sample_operator_observation(gt, w, a, operator)
        duration = params.duration(a)
        missed = bool(operator.random() < config.missed_cue_prob)
        if missed:
            obs = ObservationTriple(obs.o1, obs.o2, (1.0 - onset) * duration * 1000.0)
        reward = config.weights.task_reward(obs, q)

        engine_obs = obs
        if config.reaction_noise_sigma > 0.0:
            noisy = max(0.0, obs.o3 + noise.normal(0.0, config.reaction_noise_sigma))
            engine_obs = ObservationTriple(obs.o1, obs.o2, noisy)
        _, fell_back = tracker.update(a, engine_obs)
        fallbacks += fell_back

        arr = int(arrivals.poisson(lam * duration))
        q_next = q - 1 + arr
        if q_next > L:
            saturated += q_next - L
            q_next = L
        q = q_next

        records.append(
            TaskRecord(t, q_before, w, b_before, a, obs, reward,
                       cue_missed=missed, belief_fallback=fell_back)
        )
        score += reward

    return EpisodeLog(
        records=records,
        score=score,
        wait_epochs=waits,
        saturated_arrivals=saturated,
        belief_fallbacks=fallbacks,
        final_queue=q,
        final_belief=tracker.b_h,
    )


def run_batch(config: SimConfig, policy: Policy, collect_logs: bool = False) -> BatchResult:
    """Independent episodes with per-episode derived seeds."""
    master = np.random.SeedSequence(config.seed)
    children = master.spawn(config.episodes)
    table = discretize_observations(config.engine_model or config.ground_truth,
                                    config.channel_steps)
    scores = np.empty(config.episodes)
    logs: list[EpisodeLog] = []
    for i, child in enumerate(children):
        log = run_episode(config, policy, child, table=table)
        scores[i] = log.score
        if collect_logs:
            logs.append(log)
    return BatchResult(scores=scores, mean=float(scores.mean()),
                       sd=float(scores.std(ddof=0)), logs=logs)


# ---------------------------------------------------------------------------
# Perturbations and sensitivity
# ---------------------------------------------------------------------------


def perturb_transitions(model: WorkloadModel, pct: float,
                        rng: np.random.Generator | int | None = None) -> WorkloadModel:
    """Multiply every off-diagonal transition entry by a factor uniform in
    [1 - pct, 1 + pct], clamp to [0, 1], and renormalize each row."""
    if pct < 0.0:
        raise ValueError("perturbation fraction must be nonnegative")
    rng = np.random.default_rng(rng)
    new_trans = {}
    for a, mat in model.transitions.items():
        mat = mat.copy()
        k = mat.shape[0]
        for i in range(k):
            for j in range(k):
                if i != j:
                    mat[i, j] = np.clip(mat[i, j] * rng.uniform(1.0 - pct, 1.0 + pct), 0.0, 1.0)
        mat = np.clip(mat, 0.0, 1.0)
        mat /= mat.sum(axis=1, keepdims=True)
        new_trans[a] = mat
    return WorkloadModel(model.num_states, new_trans, model.emissions, model.initial.copy())


def add_reaction_noise(
    observations: list[ObservationTriple], sigma: float,
    rng: np.random.Generator | int | None = None,
) -> list[ObservationTriple]:
    """Additive Gaussian noise on the reaction-time channel, clamped at 0."""
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0.0:
        return list(observations)
    rng = np.random.default_rng(rng)
    return [
        ObservationTriple(o.o1, o.o2, max(0.0, o.o3 + rng.normal(0.0, sigma)))
        for o in observations
    ]


_SENSITIVITY_KINDS = {"transition_pct": 0, "reaction_sigma": 1}


def _point_seed(master_seed: int, kind: str, value: float) -> np.random.SeedSequence:
    # derived from the grid point itself, so results are order-independent
    return np.random.SeedSequence(
        entropy=(master_seed, _SENSITIVITY_KINDS[kind], int(round(value * 1_000_000)))
    )


def sensitivity_sweep(
    config: SimConfig,
    policy: Policy,
    grid: list[tuple[str, float]],
) -> list[SensitivityRow]:
    """Mean batch score under each perturbation, as absolute % change from
    the family's unperturbed baseline.

    Transition perturbations distort the engine's transition model (the
    world still follows the ground truth); reaction noise corrupts the
    engine's view of o3. The policy itself is held fixed.
    """
    for kind, _ in grid:
        if kind not in _SENSITIVITY_KINDS:
            raise ValueError(f"unknown sensitivity kind {kind!r}")
    kinds = {k for k, _ in grid}
    for kind in kinds:
        if (kind, 0.0) not in [(k, float(v)) for k, v in grid]:
            raise ValueError(f"grid must include the baseline point ({kind}, 0)")

    means: dict[tuple[str, float], float] = {}
    for kind, value in grid:
        seed_seq = _point_seed(config.seed, kind, value)
        point_seed = int(seed_seq.generate_state(1)[0])
        if kind == "transition_pct":
            engine = perturb_transitions(
                config.ground_truth, value / 100.0, np.random.default_rng(seed_seq.spawn(1)[0])
            )
            run_cfg = replace(config, engine_model=engine, seed=point_seed)
        else:
            run_cfg = replace(config, reaction_noise_sigma=value, seed=point_seed)
        means[(kind, value)] = run_batch(run_cfg, policy).mean

    rows: list[SensitivityRow] = []
    for kind, value in grid:
        base = means[(kind, 0.0)]
        if base == 0.0:
            raise ZeroDivisionError("baseline mean score is 0; percentage change undefined")
        mean = means[(kind, value)]
        rows.append(
            SensitivityRow(
                kind=kind,
                value=value,
                mean_score=mean,
                abs_pct_reward_change=abs(mean - base) / abs(base) * 100.0,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Group comparison
# ---------------------------------------------------------------------------


def compare_groups(scores_a, scores_b) -> GroupComparison:
    """Welch two-sample t-test plus Cohen's d with the pooled SD."""
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least two samples")
    sa, sb = a.std(ddof=1), b.std(ddof=1)
    pooled = math.sqrt(((len(a) - 1) * sa**2 + (len(b) - 1) * sb**2) / (len(a) + len(b) - 2))
    if pooled == 0.0:
        raise DegenerateVarianceError("zero pooled variance")
    d = (a.mean() - b.mean()) / pooled
    t_stat, p_value = stats.ttest_ind(a, b, equal_var=False)
    return GroupComparison(
        mean_a=float(a.mean()), sd_a=float(sa), n_a=len(a),
        mean_b=float(b.mean()), sd_b=float(sb), n_b=len(b),
        cohen_d=float(d), t_statistic=float(t_stat), p_value=float(p_value),
    )


# ---------------------------------------------------------------------------
# File output
# ---------------------------------------------------------------------------


def write_episode_log(log: EpisodeLog, path: str | Path) -> None:
    """Line-delimited JSON: one record per task plus a trailing summary."""
    lines = [model_io.dumps_canonical(r.to_json_dict(), indent=None) for r in log.records]
    lines.append(
        model_io.dumps_canonical(
            {
                "summary": True,
                "format_version": LOG_FORMAT_VERSION,
                "score": log.score,
                "tasks": len(log.records),
                "wait_epochs": log.wait_epochs,
                "saturated_arrivals": log.saturated_arrivals,
                "belief_fallbacks": log.belief_fallbacks,
                "final_queue": log.final_queue,
                "final_b_H": log.final_belief,
            },
            indent=None,
        )
    )
    Path(path).write_text("\n".join(lines) + "\n")


def write_sensitivity_csv(rows: list[SensitivityRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "value", "mean_score", "abs_pct_reward_change"])
        for r in rows:
            writer.writerow([r.kind, r.value, f"{r.mean_score:.6f}",
                             f"{r.abs_pct_reward_change:.6f}"])


def write_comparison_csv(comparisons: dict[str, GroupComparison], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["comparison", "mean_a", "sd_a", "n_a", "mean_b", "sd_b", "n_b",
             "cohen_d", "t_statistic", "p_value"]
        )
        for name, c in comparisons.items():
            writer.writerow(
                [name, f"{c.mean_a:.6f}", f"{c.sd_a:.6f}", c.n_a,
                 f"{c.mean_b:.6f}", f"{c.sd_b:.6f}", c.n_b,
                 f"{c.cohen_d:.6f}", f"{c.t_statistic:.6f}", f"{c.p_value:.9f}"]
            )


def write_scores_csv(scores_by_policy: dict[str, np.ndarray], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "episode", "score"])
        for name, scores in scores_by_policy.items():
            for i, s in enumerate(scores):
                writer.writerow([name, i, f"{float(s):.6f}"])


def read_scores_csv(path: str | Path) -> dict[str, np.ndarray]:
    out: dict[str, list[float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "score" not in reader.fieldnames:
            raise model_io.DataFormatError(f"{path}: missing score column")
        for row in reader:
            out.setdefault(row.get("policy", "scores"), []).append(float(row["score"]))
    return {k: np.array(v) for k, v in out.items()}
