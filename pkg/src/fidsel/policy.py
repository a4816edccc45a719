"""Belief-MDP construction and solution for fidelity selection.

The POMDP over (queue length, hidden workload) is compiled to a finite MDP
over (queue length, discretized high-workload belief): observation channels
are binned on fixed lattices, the Bayes update is composed with a
nearest-grid-point snap, queue dynamics follow lumped Poisson arrivals over
each action's service time, and the result is solved by value iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import stats

from . import model_io
from .workload import (
    Action,
    CHANNEL_RANGES,
    DEFAULT_CHANNEL_STEPS,
    ObservationTriple,
    SERVICING_ACTIONS,
    WorkloadModel,
)

POLICY_FORMAT_VERSION = 1

WAIT = "wait"  # pseudo-action at an empty queue: one epoch of arrivals, no task

GAUSSIAN_SUPPORT_SIGMAS = 4.0


class ImpossibleEvidenceError(ValueError):
    """The observation has zero probability under the predicted belief."""


@dataclass(frozen=True)
class BeliefGrid:
    """Uniform discretization of the high-workload belief on [0, 1]."""

    step: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.step <= 1.0:
            raise ValueError("grid step must lie in (0, 1]")
        n = 1.0 / self.step
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"grid step {self.step} must evenly divide [0, 1]")

    @property
    def num_points(self) -> int:
        return round(1.0 / self.step) + 1

    @property
    def points(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.num_points)

    def snap_index(self, b_h: float) -> int:
        # exact midpoints round up, toward the higher workload belief
        i = math.floor(b_h / self.step + 0.5 + 1e-12)
        return min(max(i, 0), self.num_points - 1)

    def snap(self, b_h: float) -> float:
        return float(self.points[self.snap_index(b_h)])


@dataclass(frozen=True)
class QueueParams:
    """Poisson arrival queue with per-action service times (seconds)."""

    arrival_rate: float = 1.0 / 12.0
    max_length: int = 10
    duration_high: float = 10.0
    duration_normal: float = 10.0 / 3.0
    wait_epoch: float | None = None  # defaults to the normal-fidelity duration

    def __post_init__(self):
        if self.arrival_rate <= 0.0:
            raise ValueError("arrival rate must be positive")
        if self.max_length < 1:
            raise ValueError("max queue length must be positive")
        if not 0.0 < self.duration_normal < self.duration_high:
            raise ValueError("need 0 < t_N < t_H (normal fidelity is the faster playback)")

    def duration(self, a: Action | str) -> float:
        key = a.value if isinstance(a, Action) else a
        return {"N": self.duration_normal, "H": self.duration_high, "D": 0.0}[key]

    @property
    def epoch(self) -> float:
        return self.wait_epoch if self.wait_epoch is not None else self.duration_normal


@dataclass(frozen=True)
class RewardWeights:
    """Weights of the per-task reward alpha1*o1 - alpha2*o2 - alpha3*q."""

    alpha1: float = 100.0
    alpha2: float = 30.0
    alpha3: float = 2.0
    delegation_accuracy: float = 0.30

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3) <= 0.0:
            raise ValueError("reward weights must be positive")
        if not 0.0 <= self.delegation_accuracy <= 1.0:
            raise ValueError("delegation accuracy must lie in [0, 1]")

    def task_reward(self, o: ObservationTriple, q: int) -> float:
        return self.alpha1 * o.o1 - self.alpha2 * o.o2 - self.alpha3 * q

    def delegation_reward(self, q: int) -> float:
        return self.alpha1 * self.delegation_accuracy - self.alpha3 * (q - 1)


@dataclass
class DiscreteObservationTable:
    """Per-(action, channel) lattice values and per-state bin probabilities.

    ``values[a][ch]`` lists the lattice points (integer multiples of the
    channel step) reachable under action ``a`` and ``probs[a][ch]`` holds the
    matching (num_points, K) column-stochastic bin masses, one column per
    workload state. The joint triple distribution is the product over the
    three channels.
    """

    steps: tuple[float, float, float]
    num_states: int
    values: dict[Action, list[np.ndarray]]
    probs: dict[Action, list[np.ndarray]]
    collapsed: list[str] = field(default_factory=list)

    def channel_mean(self, a: Action, ch: int, w: int) -> float:
        return float(self.values[a][ch] @ self.probs[a][ch][:, w])

    @lru_cache(maxsize=None)
    def _joint(self, a: Action) -> tuple[np.ndarray, np.ndarray]:
        vals = self.values[a]
        probs = self.probs[a]
        m1, m2, m3 = (len(v) for v in vals)
        grid = np.stack(
            np.meshgrid(vals[0], vals[1], vals[2], indexing="ij"), axis=-1
        ).reshape(-1, 3)
        joint = np.einsum("ik,jk,lk->ijlk", probs[0], probs[1], probs[2]).reshape(
            m1 * m2 * m3, self.num_states
        )
        return grid, joint

    def joint(self, a: Action) -> tuple[np.ndarray, np.ndarray]:
        """All discrete triples under ``a`` with per-state probabilities."""
        return self._joint(a)

    def triples(self, w: int, a: Action) -> list[tuple[tuple[float, float, float], float]]:
        grid, joint = self.joint(a)
        keep = joint[:, w] > 0.0
        return [(tuple(o), float(p)) for o, p in zip(grid[keep], joint[keep, w])]

    def likelihood(self, a: Action, o: tuple[float, float, float]) -> np.ndarray:
        """p(o | w, a) for every state, for a lattice-valued triple."""
        out = np.ones(self.num_states)
        for ch in range(3):
            vals = self.values[a][ch]
            idx = np.searchsorted(vals, o[ch] - self.steps[ch] / 4.0)
            if idx >= len(vals) or abs(vals[idx] - o[ch]) > self.steps[ch] / 4.0:
                return np.zeros(self.num_states)
            out *= self.probs[a][ch][idx]
        return out

    def bin_observation(self, a: Action, o: ObservationTriple) -> tuple[float, float, float]:
        """Snap a raw triple onto the action's lattice, clamped into support."""
        out = []
        for ch, x in enumerate((o.o1, o.o2, o.o3)):
            vals = self.values[a][ch]
            k = round(x / self.steps[ch])
            v = k * self.steps[ch]
            v = min(max(v, vals[0]), vals[-1])
            idx = int(np.argmin(np.abs(vals - v)))
            out.append(float(vals[idx]))
        return tuple(out)

    # lru_cache on a method keeps self alive; acceptable for table lifetimes here
    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other


def discretize_observations(
    model: WorkloadModel, steps: tuple[float, float, float] = DEFAULT_CHANNEL_STEPS
) -> DiscreteObservationTable:
    """Bin every emission channel on a fixed lattice of the given step sizes.

    Gaussian channels are integrated over bins of the channel step spanning
    mean +/- 4 sigma intersected with the channel's valid range, then
    renormalized; point-mass channels occupy a single bin.
    """
    if any(s <= 0 for s in steps):
        raise ValueError("channel steps must be positive")
    values: dict[Action, list[np.ndarray]] = {}
    probs: dict[Action, list[np.ndarray]] = {}
    collapsed: list[str] = []
    k = model.num_states
    for a in SERVICING_ACTIONS:
        values[a] = []
        probs[a] = []
        for ch in range(3):
            step = steps[ch]
            lo_r, hi_r = CHANNEL_RANGES[ch]
            supports = []
            for w in range(k):
                c = model.channel(w, a, ch)
                if c.kind == "point_mass":
                    p = round(c.point / step) * step
                    supports.append((p, p))
                else:
                    lo = max(c.mean - GAUSSIAN_SUPPORT_SIGMAS * c.std, lo_r)
                    hi = min(c.mean + GAUSSIAN_SUPPORT_SIGMAS * c.std, hi_r)
                    supports.append((lo, hi))
            k_min = min(math.floor(lo / step + 0.5) for lo, _ in supports)
            k_max = max(math.ceil(hi / step - 0.5) for _, hi in supports)
            k_max = max(k_max, k_min)
            lattice = np.arange(k_min, k_max + 1) * step
            mat = np.zeros((len(lattice), k))
            for w in range(k):
                c = model.channel(w, a, ch)
                if c.kind == "point_mass":
                    idx = int(round(c.point / step)) - k_min
                    mat[idx, w] = 1.0
                    continue
                lo, hi = supports[w]
                edges_lo = np.maximum(lattice - step / 2.0, lo)
                edges_hi = np.minimum(lattice + step / 2.0, hi)
                mass = stats.norm.cdf(edges_hi, c.mean, c.std) - stats.norm.cdf(
                    edges_lo, c.mean, c.std
                )
                mass = np.clip(mass, 0.0, None)
                total = mass.sum()
                if total <= 0.0 or (mass > 0).sum() == 1:
                    collapsed.append(f"{a.value}/w{w}/{ch}: support collapsed to one bin")
                if total <= 0.0:
                    mass[int(np.argmin(np.abs(lattice - c.mean)))] = 1.0
                    total = 1.0
                mat[:, w] = mass / total
            values[a].append(lattice)
            probs[a].append(mat)
    return DiscreteObservationTable(
        steps=tuple(steps), num_states=k, values=values, probs=probs, collapsed=collapsed
    )


def belief_update(
    model: WorkloadModel,
    table: DiscreteObservationTable,
    b: np.ndarray,
    a: Action,
    o: tuple[float, float, float],
    grid: BeliefGrid | None = None,
) -> tuple[np.ndarray, float]:
    """One Bayes step: predict through the action's transition, weight by the
    discrete observation likelihood, normalize, then snap to the grid.

    Returns the exact posterior vector and the snapped high-workload belief.
    """
    if not a.is_servicing:
        raise ValueError("delegation yields no observation; propagate the belief unchanged")
    b = np.asarray(b, dtype=float)
    pred = b @ model.transition(a)
    lik = table.likelihood(a, o)
    joint = lik * pred
    norm = joint.sum()
    if norm <= 0.0:
        raise ImpossibleEvidenceError(f"observation {o} has zero probability under action {a.value}")
    exact = joint / norm
    grid = grid or BeliefGrid()
    return exact, grid.snap(float(exact[-1]))


def belief_transition(
    model: WorkloadModel,
    table: DiscreteObservationTable,
    b_h: float,
    a: Action | str,
    grid: BeliefGrid | None = None,
) -> np.ndarray:
    """Distribution of the next snapped belief from a grid-point belief."""
    grid = grid or BeliefGrid()
    out = np.zeros(grid.num_points)
    if a == WAIT or a is Action.D:
        out[grid.snap_index(b_h)] = 1.0
        return out
    _require_two_states(model)
    b = np.array([1.0 - b_h, b_h])
    pred = b @ model.transition(a)
    _, joint = table.joint(a)
    p_o = joint @ pred
    keep = p_o > 0.0
    post_h = joint[keep, 1] * pred[1] / p_o[keep]
    idx = np.floor(post_h / grid.step + 0.5 + 1e-12).astype(int)
    idx = np.clip(idx, 0, grid.num_points - 1)
    np.add.at(out, idx, p_o[keep])
    return out


def queue_transition(params: QueueParams, q: int, a: Action | str) -> np.ndarray:
    """Distribution over the next queue length; mass beyond L lumps onto L."""
    if a == WAIT:
        if q != 0:
            raise ValueError("wait is only available at an empty queue")
        return _lumped_poisson(0, params.arrival_rate * params.epoch, params.max_length)
    a = Action(a) if isinstance(a, str) else a
    if q < 1:
        raise ValueError(f"no task to {'service' if a.is_servicing else 'delegate'} at q=0")
    if q > params.max_length:
        raise ValueError(f"queue length {q} exceeds maximum {params.max_length}")
    return _lumped_poisson(q - 1, params.arrival_rate * params.duration(a), params.max_length)


def _lumped_poisson(base: int, rate: float, max_length: int) -> np.ndarray:
    out = np.zeros(max_length + 1)
    top = max_length - base
    ks = np.arange(top)
    out[base : base + top] = stats.poisson.pmf(ks, rate)
    out[max_length] = stats.poisson.sf(top - 1, rate)
    return out


def expected_reward(
    weights: RewardWeights,
    table: DiscreteObservationTable,
    q: int,
    b_h: float,
    a: Action | str,
) -> float:
    """Expected one-task reward at (q, b_H) under the discretized channels."""
    if a == WAIT:
        return 0.0
    a = Action(a) if isinstance(a, str) else a
    if q < 1:
        raise ValueError("reward references the head-of-queue task; queue is empty")
    if a is Action.D:
        return weights.delegation_reward(q)
    per_state = np.array(
        [
            weights.alpha1 * table.channel_mean(a, 0, w)
            - weights.alpha2 * table.channel_mean(a, 1, w)
            for w in range(table.num_states)
        ]
    )
    b = np.array([1.0 - b_h, b_h])
    return float(b @ per_state - weights.alpha3 * q)


def _require_two_states(model: WorkloadModel):
    if model.num_states != 2:
        raise ValueError("the belief MDP tracks a scalar high-workload belief; need K=2")


@dataclass
class BeliefMdp:
    """Finite MDP over (queue length, snapped belief) states."""

    grid: BeliefGrid
    params: QueueParams
    weights: RewardWeights
    action_set: tuple[Action, ...]
    actions: tuple[str, ...]  # real actions plus the wait pseudo-action
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    feasible: np.ndarray  # (S, A) bool

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    def state_index(self, q: int, b_h: float) -> int:
        return q * self.grid.num_points + self.grid.snap_index(b_h)

    def state_of(self, s: int) -> tuple[int, float]:
        n = self.grid.num_points
        return s // n, float(self.grid.points[s % n])


def build_belief_mdp(
    model: WorkloadModel,
    table: DiscreteObservationTable,
    params: QueueParams,
    weights: RewardWeights,
    action_set: tuple[Action, ...] = (Action.N, Action.H),
    grid: BeliefGrid | None = None,
) -> BeliefMdp:
    """Compose queue and belief kernels into the product-state MDP.

    Queue and belief evolve independently given the action, so each
    transition row is the outer product of the two kernels. States with an
    empty queue expose a single wait pseudo-action: one epoch of arrivals,
    unchanged belief, zero reward.
    """
    _require_two_states(model)
    grid = grid or BeliefGrid()
    if Action.N not in action_set or Action.H not in action_set:
        raise ValueError("action set must include both servicing fidelities")
    actions = tuple(a.value for a in action_set) + (WAIT,)
    n = grid.num_points
    L = params.max_length
    S = (L + 1) * n
    A = len(actions)

    belief_kernels = {}
    for a in action_set:
        belief_kernels[a.value] = np.stack(
            [belief_transition(model, table, b, a, grid) for b in grid.points]
        )
    queue_kernels = {
        a.value: np.stack(
            [queue_transition(params, q, a) for q in range(1, L + 1)]
        )
        for a in action_set
    }
    wait_row = queue_transition(params, 0, WAIT)

    transition = np.zeros((S, A, S))
    reward = np.zeros((S, A))
    feasible = np.zeros((S, A), dtype=bool)
    for q in range(L + 1):
        for ib in range(n):
            s = q * n + ib
            b_h = float(grid.points[ib])
            if q == 0:
                transition[s, A - 1] = np.outer(wait_row, _one_hot(n, ib)).reshape(-1)
                feasible[s, A - 1] = True
                continue
            for ai, a in enumerate(action_set):
                row = np.outer(queue_kernels[a.value][q - 1], belief_kernels[a.value][ib])
                transition[s, ai] = row.reshape(-1)
                reward[s, ai] = expected_reward(weights, table, q, b_h, a)
                feasible[s, ai] = True
    return BeliefMdp(
        grid=grid,
        params=params,
        weights=weights,
        action_set=tuple(action_set),
        actions=actions,
        transition=transition,
        reward=reward,
        feasible=feasible,
    )


def _one_hot(n: int, i: int) -> np.ndarray:
    v = np.zeros(n)
    v[i] = 1.0
    return v


@dataclass
class PolicyTable:
    """Solved policy and value over (q, b_H), plus the solve configuration."""

    grid_step: float
    max_length: int
    action_set: tuple[str, ...]
    gamma: float
    actions: np.ndarray  # (S,) of action labels
    values: np.ndarray  # (S,)

    @property
    def grid(self) -> BeliefGrid:
        return BeliefGrid(self.grid_step)

    def lookup(self, q: int, b_h: float) -> str:
        if not 0 <= q <= self.max_length:
            raise ValueError(f"queue length {q} outside [0, {self.max_length}]")
        s = q * self.grid.num_points + self.grid.snap_index(b_h)
        return str(self.actions[s])

    def value(self, q: int, b_h: float) -> float:
        s = q * self.grid.num_points + self.grid.snap_index(b_h)
        return float(self.values[s])

    def entries(self) -> list[dict]:
        grid = self.grid
        out = []
        for q in range(self.max_length + 1):
            for ib in range(grid.num_points):
                s = q * grid.num_points + ib
                out.append(
                    {
                        "q": q,
                        "b_H": float(grid.points[ib]),
                        "action": str(self.actions[s]),
                        "value": float(self.values[s]),
                    }
                )
        return out


@dataclass
class SolveResult:
    values: np.ndarray
    policy: PolicyTable
    iterations: int
    sup_deltas: list[float]
    converged: bool


def value_iteration(
    mdp: BeliefMdp, gamma: float = 0.95, tol: float = 1e-6, max_iters: int = 100_000
) -> SolveResult:
    """Bellman iteration to sup-norm tolerance, then a greedy policy read-out.

    Ties between actions break deterministically toward the earlier entry in
    the action list (N before H before D).
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("discount factor must lie in [0, 1)")
    S = mdp.num_states
    v = np.zeros(S)
    r = np.where(mdp.feasible, mdp.reward, -np.inf)
    deltas: list[float] = []
    converged = False
    iterations = 0
    q_values = r.copy()
    for iterations in range(1, max_iters + 1):
        q_values = r + gamma * (mdp.transition @ v)
        v_new = q_values.max(axis=1)
        delta = float(np.abs(v_new - v).max())
        deltas.append(delta)
        v = v_new
        if delta < tol:
            converged = True
            break
    policy_idx = q_values.argmax(axis=1)
    labels = np.array(mdp.actions, dtype=object)[policy_idx]
    policy = PolicyTable(
        grid_step=mdp.grid.step,
        max_length=mdp.params.max_length,
        action_set=tuple(a.value for a in mdp.action_set),
        gamma=gamma,
        actions=labels,
        values=v.copy(),
    )
    return SolveResult(
        values=v, policy=policy, iterations=iterations, sup_deltas=deltas, converged=converged
    )


# ---------------------------------------------------------------------------
# Structure report
# ---------------------------------------------------------------------------


@dataclass
class QueueRow:
    q: int
    actions: list[str]
    first_b: dict[str, float | None]
    h_is_upset: bool
    interval_ordered: bool  # actions along b_H follow the pattern N* H* D*


@dataclass
class StructureReport:
    rows: list[QueueRow]
    h_upset_everywhere: bool
    interval_ordered_everywhere: bool
    d_min_b: float | None
    d_min_q: int | None
    grid_step: float

    def render_text(self) -> str:
        lines = ["action regions by queue length (smallest b_H where each action begins)"]
        acts = sorted({a for row in self.rows for a in row.first_b})
        header = "  q | " + " | ".join(f"{a:>5}" for a in acts) + " | H up-set"
        lines.append(header)
        lines.append("-" * len(header))
        for row in self.rows:
            cells = []
            for a in acts:
                b = row.first_b.get(a)
                cells.append("    -" if b is None else f"{b:5.2f}")
            lines.append(f"{row.q:3d} | " + " | ".join(cells) + f" | {str(row.h_is_upset):>8}")
        lines.append(f"H region is an up-set in b_H at every q: {self.h_upset_everywhere}")
        lines.append(
            "action regions are ordered N, H, D along b_H at every q: "
            f"{self.interval_ordered_everywhere}"
        )
        if self.d_min_b is None:
            lines.append("delegation region: empty")
        else:
            lines.append(
                f"delegation region: b_H >= {self.d_min_b:.2f} and q >= {self.d_min_q}"
            )
        return "\n".join(lines) + "\n"


def policy_structure_report(policy: PolicyTable) -> StructureReport:
    """Summarize where each action region begins and whether H is a threshold."""
    grid = policy.grid
    rows = []
    h_upset = True
    ordered_all = True
    d_cells: list[tuple[int, float]] = []
    for q in range(1, policy.max_length + 1):
        acts = [policy.lookup(q, b) for b in grid.points]
        first_b: dict[str, float | None] = {}
        for a in set(acts) | set(policy.action_set):
            idxs = [i for i, x in enumerate(acts) if x == a]
            first_b[a] = float(grid.points[idxs[0]]) if idxs else None
        h_idxs = [i for i, x in enumerate(acts) if x == "H"]
        is_upset = not h_idxs or h_idxs == list(range(h_idxs[0], grid.num_points))
        rank = {"N": 0, "H": 1, "D": 2}
        ordered = all(rank[a] <= rank[b] for a, b in zip(acts, acts[1:]))
        h_upset &= is_upset
        ordered_all &= ordered
        rows.append(QueueRow(q=q, actions=acts, first_b=first_b, h_is_upset=is_upset,
                             interval_ordered=ordered))
        d_cells.extend((q, float(grid.points[i])) for i, x in enumerate(acts) if x == "D")
    return StructureReport(
        rows=rows,
        h_upset_everywhere=h_upset,
        interval_ordered_everywhere=ordered_all,
        d_min_b=min((b for _, b in d_cells), default=None),
        d_min_q=min((q for q, _ in d_cells), default=None),
        grid_step=grid.step,
    )


# ---------------------------------------------------------------------------
# Policy export / import
# ---------------------------------------------------------------------------


def policy_to_dict(policy: PolicyTable) -> dict:
    return {
        "format_version": POLICY_FORMAT_VERSION,
        "grid_step": policy.grid_step,
        "L": policy.max_length,
        "action_set": list(policy.action_set),
        "gamma": policy.gamma,
        "entries": policy.entries(),
    }


def policy_from_dict(doc: dict) -> PolicyTable:
    try:
        if int(doc["format_version"]) != POLICY_FORMAT_VERSION:
            raise model_io.DataFormatError(
                f"unsupported policy format_version {doc['format_version']}"
            )
        grid_step = float(doc["grid_step"])
        L = int(doc["L"])
        action_set = tuple(str(a) for a in doc["action_set"])
        gamma = float(doc["gamma"])
        grid = BeliefGrid(grid_step)
        S = (L + 1) * grid.num_points
        actions = np.empty(S, dtype=object)
        values = np.zeros(S)
        allowed = set(action_set) | {WAIT}
        seen = 0
        for e in doc["entries"]:
            s = int(e["q"]) * grid.num_points + grid.snap_index(float(e["b_H"]))
            label = str(e["action"])
            if label not in allowed:
                raise model_io.DataFormatError(
                    f"policy entry action {label!r} outside the action set {sorted(allowed)}"
                )
            actions[s] = label
            values[s] = float(e["value"])
            seen += 1
        if seen != S or any(a is None for a in actions):
            raise model_io.DataFormatError("policy entries do not cover the state space")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, model_io.DataFormatError):
            raise
        raise model_io.DataFormatError(f"malformed policy document: {exc}") from exc
    return PolicyTable(
        grid_step=grid_step,
        max_length=L,
        action_set=action_set,
        gamma=gamma,
        actions=actions,
        values=values,
    )


def save_policy(policy: PolicyTable, path: str | Path) -> None:
    Path(path).write_text(model_io.dumps_canonical(policy_to_dict(policy), sigfigs=12))


def load_policy(path: str | Path) -> PolicyTable:
    import json

    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise model_io.DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    return policy_from_dict(doc)


# ---------------------------------------------------------------------------
# Shared engine-side belief tracking (simulator and session service)
# ---------------------------------------------------------------------------


class BeliefTracker:
    """Grid-snapped belief state updated from raw observations.

    Raw triples are binned with the solver's channel steps and clamped into
    the action's lattice before the Bayes step, so the tracker sees exactly
    the observation space the policy was solved over. Evidence that remains
    impossible after clamping falls back to pure transition propagation and
    is flagged.
    """

    def __init__(
        self,
        model: WorkloadModel,
        table: DiscreteObservationTable,
        grid: BeliefGrid | None = None,
        initial_b_h: float | None = None,
    ):
        _require_two_states(model)
        self.model = model
        self.table = table
        self.grid = grid or BeliefGrid()
        b0 = float(model.initial[1]) if initial_b_h is None else float(initial_b_h)
        self.b_h = self.grid.snap(b0)
        self.fallbacks = 0

    def belief_vector(self) -> np.ndarray:
        return np.array([1.0 - self.b_h, self.b_h])

    def update(self, a: Action, o: ObservationTriple | None) -> tuple[float, bool]:
        """Advance the belief one task; returns (new snapped b_H, fallback flag)."""
        if a is Action.D:
            if o is not None:
                raise ValueError("delegation carries no observation")
            return self.b_h, False
        if o is None:
            raise ValueError(f"servicing action {a.value} requires an observation")
        binned = self.table.bin_observation(a, o)
        try:
            _, snapped = belief_update(
                self.model, self.table, self.belief_vector(), a, binned, self.grid
            )
            self.b_h = snapped
            return self.b_h, False
        except ImpossibleEvidenceError:
            pred = self.belief_vector() @ self.model.transition(a)
            self.b_h = self.grid.snap(float(pred[1]))
            self.fallbacks += 1
            return self.b_h, True
