"""Hidden-workload model: an input-output HMM over operator performance.

The operator's cognitive workload is a hidden discrete state whose dynamics
depend on the fidelity action chosen for each task. Each serviced task emits
a performance triple (fraction detected, false alarms, reaction time) whose
distribution depends on the workload state and the action. Delegated tasks
emit nothing and leave the workload unchanged.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Action",
    "SERVICING_ACTIONS",
    "CHANNEL_NAMES",
    "CHANNEL_RANGES",
    "DEFAULT_CHANNEL_STEPS",
    "ObservationTriple",
    "EmissionChannel",
    "WorkloadModel",
    "TraceStep",
    "TaskTrace",
    "EmConfig",
    "FitReport",
    "SelectionResult",
    "DegenerateEvidenceError",
    "emission_likelihood",
    "forward_filter",
    "sample_trajectory",
    "em_fit",
    "information_criteria",
    "select_model",
]


class Action(enum.Enum):
    """Fidelity actions: normal, high, or delegate to autonomy."""

    N = "N"
    H = "H"
    D = "D"

    @property
    def is_servicing(self) -> bool:
        return self is not Action.D


SERVICING_ACTIONS = (Action.N, Action.H)

CHANNEL_NAMES = ("o1", "o2", "o3")
# (fraction detected, false-alarm count, reaction time in ms)
CHANNEL_RANGES = ((0.0, 1.0), (0.0, math.inf), (0.0, math.inf))
DEFAULT_CHANNEL_STEPS = (0.05, 0.5, 25.0)

_CODE = {Action.N: 0, Action.H: 1, Action.D: 2}


class DegenerateEvidenceError(ValueError):
    """An observation has zero probability under every hidden state."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"zero-probability evidence at step {step}")


@dataclass(frozen=True)
class ObservationTriple:
    """Per-task evidence: detection fraction, false alarms, reaction time (ms)."""

    o1: float
    o2: float
    o3: float

    def __post_init__(self):
        if not 0.0 <= self.o1 <= 1.0:
            raise ValueError(f"o1 must lie in [0, 1], got {self.o1}")
        if self.o2 < 0.0:
            raise ValueError(f"o2 must be nonnegative, got {self.o2}")
        if self.o3 < 0.0:
            raise ValueError(f"o3 must be nonnegative, got {self.o3}")

    def as_array(self) -> np.ndarray:
        return np.array([self.o1, self.o2, self.o3])


@dataclass(frozen=True)
class EmissionChannel:
    """One observation channel's conditional distribution for a (state, action) pair.

    Either a Gaussian (mean, std) or a point mass that concentrates all
    probability at ``point``. Point masses arise when a channel's fitted
    variance collapses below the variance floor (e.g. zero false alarms in
    the normal workload state).
    """

    kind: str  # "gaussian" | "point_mass"
    mean: float = 0.0
    std: float = 1.0
    point: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "point_mass"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.kind == "gaussian" and self.std <= 0.0:
            raise ValueError("gaussian channel requires std > 0")

    @classmethod
    def gaussian(cls, mean: float, std: float) -> "EmissionChannel":
        return cls(kind="gaussian", mean=mean, std=std)

    @classmethod
    def point_mass(cls, point: float) -> "EmissionChannel":
        return cls(kind="point_mass", point=point)

    def density(self, x: float, tol: float) -> float:
        if self.kind == "gaussian":
            z = (x - self.mean) / self.std
            return math.exp(-0.5 * z * z) / (self.std * math.sqrt(2.0 * math.pi))
        return 1.0 if abs(x - self.point) < tol else 0.0

    @property
    def location(self) -> float:
        return self.mean if self.kind == "gaussian" else self.point


def _default_point_tols() -> tuple[float, ...]:
    return tuple(s / 2.0 for s in DEFAULT_CHANNEL_STEPS)


@dataclass
class WorkloadModel:
    """IOHMM parameters: per-action transitions, per-(state, action) emissions.

    ``transitions[a]`` is a K x K row-stochastic matrix for servicing actions;
    delegation always uses the identity (workload unchanged). ``emissions[a][w]``
    is a 3-tuple of channels for the observation triple. ``initial`` is the
    distribution of the workload state before the first task.
    """

    num_states: int
    transitions: dict[Action, np.ndarray]
    emissions: dict[Action, list[tuple[EmissionChannel, EmissionChannel, EmissionChannel]]]
    initial: np.ndarray

    _PROB_ATOL = 1e-9

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=float)
        self.transitions = {a: np.asarray(m, dtype=float) for a, m in self.transitions.items()}
        self.validate()

    def validate(self):
        k = self.num_states
        if k < 1:
            raise ValueError("num_states must be positive")
        if set(self.transitions) != set(SERVICING_ACTIONS):
            raise ValueError("transitions must be given for exactly the servicing actions")
        for a, mat in self.transitions.items():
            if mat.shape != (k, k):
                raise ValueError(f"transition matrix for {a} has shape {mat.shape}, want {(k, k)}")
            if np.any(mat < -self._PROB_ATOL) or np.any(mat > 1 + self._PROB_ATOL):
                raise ValueError(f"transition probabilities for {a} outside [0, 1]")
            if not np.allclose(mat.sum(axis=1), 1.0, atol=self._PROB_ATOL, rtol=0.0):
                raise ValueError(f"transition rows for {a} do not sum to 1")
        if self.initial.shape != (k,):
            raise ValueError("initial distribution has wrong length")
        if np.any(self.initial < -self._PROB_ATOL) or not math.isclose(
            float(self.initial.sum()), 1.0, abs_tol=self._PROB_ATOL
        ):
            raise ValueError("initial distribution must be a probability vector")
        if set(self.emissions) != set(SERVICING_ACTIONS):
            raise ValueError("emissions must be given for exactly the servicing actions")
        for a, per_state in self.emissions.items():
            if len(per_state) != k:
                raise ValueError(f"emissions for {a} must have one entry per state")
            for chans in per_state:
                if len(chans) != len(CHANNEL_NAMES):
                    raise ValueError("each state needs one channel per observation")

    @property
    def delegation_transition(self) -> np.ndarray:
        return np.eye(self.num_states)

    def transition(self, a: Action) -> np.ndarray:
        if a is Action.D:
            return self.delegation_transition
        return self.transitions[a]

    def channel(self, w: int, a: Action, ch: int) -> EmissionChannel:
        return self.emissions[a][w][ch]

    def relabeled(self, order: np.ndarray) -> "WorkloadModel":
        """Return the model with hidden-state labels permuted by ``order``."""
        order = np.asarray(order)
        trans = {a: m[np.ix_(order, order)] for a, m in self.transitions.items()}
        emis = {a: [self.emissions[a][i] for i in order] for a in self.emissions}
        return WorkloadModel(self.num_states, trans, emis, self.initial[order])

    def canonicalized(self) -> "WorkloadModel":
        """Relabel states so mean reaction time under N increases with the index."""
        locs = [self.channel(w, Action.N, 2).location for w in range(self.num_states)]
        order = np.argsort(locs, kind="stable")
        return self.relabeled(order)

    def _arrays(self) -> "_ModelArrays":
        k = self.num_states
        trans = np.stack([self.transitions[Action.N], self.transitions[Action.H], np.eye(k)])
        mean = np.zeros((2, k, 3))
        std = np.ones((2, k, 3))
        is_point = np.zeros((2, k, 3), dtype=bool)
        point = np.zeros((2, k, 3))
        for ai, a in enumerate(SERVICING_ACTIONS):
            for w in range(k):
                for ch, c in enumerate(self.emissions[a][w]):
                    if c.kind == "gaussian":
                        mean[ai, w, ch], std[ai, w, ch] = c.mean, c.std
                    else:
                        is_point[ai, w, ch] = True
                        point[ai, w, ch] = c.point
        return _ModelArrays(trans, mean, std, is_point, point)


@dataclass
class _ModelArrays:
    trans: np.ndarray  # (3, K, K); [N, H, identity]
    mean: np.ndarray  # (2, K, 3)
    std: np.ndarray
    is_point: np.ndarray
    point: np.ndarray


@dataclass(frozen=True)
class TraceStep:
    action: Action
    observation: ObservationTriple | None

    def __post_init__(self):
        if self.action.is_servicing and self.observation is None:
            raise ValueError(f"servicing action {self.action.value} requires an observation")
        if not self.action.is_servicing and self.observation is not None:
            raise ValueError("delegation steps carry no observation")


@dataclass
class TaskTrace:
    """One session's ordered (action, observation) record."""

    steps: list[TraceStep]
    session_id: str = ""

    def __post_init__(self):
        if not self.steps:
            raise ValueError("trace must be nonempty")

    def __len__(self) -> int:
        return len(self.steps)


@dataclass
class EmConfig:
    restarts: int = 10
    max_iters: int = 500
    tol: float = 1e-6
    variance_floor: float = 1e-4
    seed: int | None = None
    kmeans_iters: int = 25
    convert_point_mass: bool = True


@dataclass
class FitReport:
    model: WorkloadModel
    loglik_trace: list[float]
    num_params: int
    num_trajectories: int
    converged: bool
    warnings: list[str] = field(default_factory=list)
    restart_traces: list[list[float]] = field(default_factory=list)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]


@dataclass
class SelectionResult:
    best_k: int
    reports: dict[int, FitReport]
    table: list[dict]
    criterion: str
    errors: dict[int, str] = field(default_factory=dict)


def emission_likelihood(
    model: WorkloadModel,
    w: int,
    a: Action,
    o: ObservationTriple,
    point_mass_tols: tuple[float, ...] | None = None,
) -> float:
    """Joint density of the observation triple given (state, action).

    Channels are conditionally independent, so the value is the product of
    the three channel densities. Point-mass channels contribute 1 when the
    observed value falls within the matching tolerance of the point, else 0.
    """
    if not a.is_servicing:
        raise ValueError("delegation produces no operator observation")
    if not 0 <= w < model.num_states:
        raise ValueError(f"state index {w} out of range")
    tols = point_mass_tols or _default_point_tols()
    x = o.as_array()
    out = 1.0
    for ch in range(3):
        out *= model.channel(w, a, ch).density(x[ch], tols[ch])
    return out


def _log_emissions(
    arrays: _ModelArrays, codes: np.ndarray, servicing: np.ndarray, obs: np.ndarray,
    point_mass_tols: tuple[float, ...],
) -> np.ndarray:
    """Per-(trace, step, state) log emission density; 0 at non-servicing steps."""
    n, tmax = codes.shape
    k = arrays.mean.shape[1]
    logb = np.zeros((n, tmax, k))
    if not servicing.any():
        return logb
    idx = np.clip(codes, 0, 1)
    mean = arrays.mean[idx]  # (n, tmax, K, 3)
    std = arrays.std[idx]
    x = np.where(servicing[..., None], obs, 0.0)[:, :, None, :]
    z = (x - mean) / std
    logpdf = -0.5 * z * z - np.log(std) - 0.5 * math.log(2.0 * math.pi)
    if arrays.is_point.any():
        pt_mask = arrays.is_point[idx]
        tol = np.asarray(point_mass_tols)
        hit = np.abs(x - arrays.point[idx]) < tol
        logpdf = np.where(pt_mask, np.where(hit, 0.0, -np.inf), logpdf)
    logb = logpdf.sum(axis=3)
    logb[~servicing] = 0.0
    return logb


@dataclass
class _Packed:
    codes: np.ndarray  # (n, tmax) int8; padding coded as identity steps
    valid: np.ndarray  # (n, tmax) bool
    servicing: np.ndarray  # (n, tmax) bool
    obs: np.ndarray  # (n, tmax, 3)


def _pack(dataset: list[TaskTrace]) -> _Packed:
    n = len(dataset)
    tmax = max(len(t) for t in dataset)
    codes = np.full((n, tmax), 2, dtype=np.int8)
    valid = np.zeros((n, tmax), dtype=bool)
    obs = np.zeros((n, tmax, 3))
    for i, trace in enumerate(dataset):
        for t, step in enumerate(trace.steps):
            codes[i, t] = _CODE[step.action]
            valid[i, t] = True
            if step.observation is not None:
                obs[i, t] = step.observation.as_array()
    servicing = valid & (codes < 2)
    return _Packed(codes, valid, servicing, obs)


def _forward_backward(arrays: _ModelArrays, initial: np.ndarray, packed: _Packed,
                      logb: np.ndarray):
    """Scaled forward-backward over all traces at once.

    Time index 0 is the pre-episode state (no emission); step t of a trace
    maps to time index t + 1.
    """
    n, tmax, k = logb.shape
    a_step = arrays.trans[packed.codes]  # (n, tmax, K, K)
    shift = logb.max(axis=2)
    bad = ~np.isfinite(shift) & packed.servicing
    if bad.any():
        i, t = np.argwhere(bad)[0]
        raise DegenerateEvidenceError(int(t), f"trace {i}: zero-probability evidence at step {t}")
    shift = np.where(packed.servicing, shift, 0.0)
    bshift = np.exp(logb - shift[..., None])
    bshift[~packed.servicing] = 1.0

    alpha = np.empty((n, tmax + 1, k))
    scale = np.ones((n, tmax + 1))
    alpha[:, 0] = initial
    for t in range(1, tmax + 1):
        pred = np.einsum("ni,nij->nj", alpha[:, t - 1], a_step[:, t - 1])
        raw = pred * bshift[:, t - 1]
        s = raw.sum(axis=1)
        dead = (s <= 0.0) & packed.valid[:, t - 1]
        if dead.any():
            i = int(np.argwhere(dead)[0][0])
            raise DegenerateEvidenceError(t - 1, f"trace {i}: evidence underflow at step {t - 1}")
        s = np.where(s <= 0.0, 1.0, s)
        alpha[:, t] = raw / s[:, None]
        scale[:, t] = s

    loglik = np.log(scale[:, 1:]).sum(axis=1) + shift.sum(axis=1)

    beta = np.empty((n, tmax + 1, k))
    beta[:, tmax] = 1.0
    for t in range(tmax, 0, -1):
        w = bshift[:, t - 1] * beta[:, t]
        beta[:, t - 1] = np.einsum("nij,nj->ni", a_step[:, t - 1], w) / scale[:, t, None]

    gamma = alpha * beta
    gamma /= gamma.sum(axis=2, keepdims=True)

    # xi[n, t, i, j]: posterior of the (t -> t+1) transition, one per trace step
    xi = (
        alpha[:, :-1, :, None]
        * a_step
        * (bshift * beta[:, 1:])[:, :, None, :]
        / scale[:, 1:, None, None]
    )
    return gamma, xi, loglik


def forward_filter(
    model: WorkloadModel,
    trace: TaskTrace,
    point_mass_tols: tuple[float, ...] | None = None,
) -> tuple[float, np.ndarray]:
    """Run the belief recursion over a recorded trace.

    Returns the total log-likelihood sum(log p(o_t | o_<t)) and the filtered
    posterior over workload states after each step. Delegation steps carry
    the belief through the identity transition with no evidence update.
    """
    packed = _pack([trace])
    arrays = model._arrays()
    tols = point_mass_tols or _default_point_tols()
    logb = _log_emissions(arrays, packed.codes, packed.servicing, packed.obs, tols)
    gamma, _, loglik = _forward_backward(arrays, model.initial, packed, logb)
    # filtered (not smoothed) marginals come from a pure forward pass
    a_step = arrays.trans[packed.codes[0]]
    bshift = np.exp(logb[0] - logb[0].max(axis=1, keepdims=True))
    b = model.initial.copy()
    filtered = np.empty((len(trace), model.num_states))
    for t in range(len(trace)):
        pred = b @ a_step[t]
        raw = pred * bshift[t]
        s = raw.sum()
        if s <= 0.0:
            raise DegenerateEvidenceError(t)
        b = raw / s
        filtered[t] = b
    return float(loglik[0]), filtered


def sample_trajectory(
    model: WorkloadModel,
    actions: list[Action],
    rng: np.random.Generator | int | None = None,
) -> tuple[TaskTrace, list[int]]:
    """Draw a hidden workload path and observations for a fixed action sequence."""
    rng = np.random.default_rng(rng)
    w = int(rng.choice(model.num_states, p=model.initial))
    tols = _default_point_tols()
    steps: list[TraceStep] = []
    states: list[int] = []
    for a in actions:
        if a is Action.D:
            steps.append(TraceStep(a, None))
            states.append(w)
            continue
        w = int(rng.choice(model.num_states, p=model.transition(a)[w]))
        vals = []
        for ch in range(3):
            c = model.channel(w, a, ch)
            if c.kind == "gaussian":
                x = rng.normal(c.mean, c.std)
            else:
                x = c.point
            lo, hi = CHANNEL_RANGES[ch]
            vals.append(min(max(x, lo), hi))
        steps.append(TraceStep(a, ObservationTriple(*vals)))
        states.append(w)
    return TaskTrace(steps=steps), states


# ---------------------------------------------------------------------------
# EM training
# ---------------------------------------------------------------------------


def _init_params(packed: _Packed, k: int, floor_std: float, rng: np.random.Generator,
                 kmeans_iters: int = 25):
    """Seed a restart: 1-d k-means on reaction times, Dirichlet transition rows."""
    rt = packed.obs[..., 2][packed.servicing]
    if rt.size == 0:
        raise ValueError("dataset contains no servicing steps")
    qs = np.quantile(rt, (np.arange(k) + 0.5) / k)
    centers = qs + rng.normal(0.0, 0.05 * (rt.std() + 1e-12), size=k)
    for _ in range(kmeans_iters):
        labels = np.argmin(np.abs(rt[:, None] - centers[None, :]), axis=1)
        for j in range(k):
            if np.any(labels == j):
                centers[j] = rt[labels == j].mean()
    order = np.argsort(centers, kind="stable")
    centers = centers[order]
    labels = np.argmin(np.abs(rt[:, None] - centers[None, :]), axis=1)

    obs_flat = packed.obs[packed.servicing]
    codes_flat = np.clip(packed.codes[packed.servicing], 0, 1)
    glob_mean = obs_flat.mean(axis=0)
    glob_std = obs_flat.std(axis=0) + 1e-6
    mean = np.empty((2, k, 3))
    std = np.empty((2, k, 3))
    for ai in range(2):
        for j in range(k):
            sel = (codes_flat == ai) & (labels == j)
            if not sel.any():
                sel = labels == j
            if not sel.any():
                sub_mean, sub_std = glob_mean, glob_std
            else:
                sub = obs_flat[sel]
                sub_mean = sub.mean(axis=0)
                sub_std = sub.std(axis=0)
            std[ai, j] = np.maximum(np.maximum(sub_std, 0.25 * glob_std), floor_std)
            mean[ai, j] = sub_mean + rng.normal(0.0, 0.1 * std[ai, j])
    trans = rng.dirichlet(np.ones(k), size=(2, k))
    initial = rng.dirichlet(np.ones(k))
    if k == 1:
        trans = np.ones((2, 1, 1))
        initial = np.ones(1)
    return trans, mean, std, initial


def _run_restart(packed: _Packed, k: int, config: EmConfig, rng: np.random.Generator):
    floor_std = math.sqrt(config.variance_floor)
    trans, mean, std, initial = _init_params(packed, k, floor_std, rng, config.kmeans_iters)
    eye = np.eye(k)[None]
    trace: list[float] = []
    converged = False
    ll_prev = -math.inf
    gamma = xi = None
    sel = [packed.servicing & (packed.codes == ai) for ai in range(2)]

    for it in range(config.max_iters):
        arrays = _ModelArrays(
            np.concatenate([trans, eye]), mean, std,
            np.zeros_like(mean, dtype=bool), np.zeros_like(mean),
        )
        logb = _log_emissions(arrays, packed.codes, packed.servicing, packed.obs,
                              _default_point_tols())
        gamma, xi, ll_i = _forward_backward(arrays, initial, packed, logb)
        ll = float(ll_i.sum())
        trace.append(ll)
        if it > 0 and ll - ll_prev < config.tol * max(1.0, abs(ll_prev)):
            converged = True
            break
        ll_prev = ll
        if it == config.max_iters - 1:
            break

        # M-step
        initial = gamma[:, 0, :].sum(axis=0)
        initial /= initial.sum()
        for ai in range(2):
            counts = np.einsum("nt,ntij->ij", sel[ai], xi)
            rows = counts.sum(axis=1)
            ok = rows > 0.0
            trans[ai][ok] = counts[ok] / rows[ok, None]
        g = gamma[:, 1:, :]
        for ai in range(2):
            wmask = g * sel[ai][..., None]  # (n, tmax, K)
            wsum = wmask.sum(axis=(0, 1))  # (K,)
            xw = np.einsum("ntk,ntc->kc", wmask, packed.obs)
            xxw = np.einsum("ntk,ntc->kc", wmask, packed.obs**2)
            ok = wsum > 1e-12
            mu = np.where(ok[:, None], xw / np.where(ok, wsum, 1.0)[:, None], mean[ai])
            var = np.where(
                ok[:, None],
                xxw / np.where(ok, wsum, 1.0)[:, None] - mu**2,
                std[ai] ** 2,
            )
            mean[ai] = mu
            std[ai] = np.sqrt(np.maximum(var, config.variance_floor))

    # weighted moments under the returned parameters, for point-mass conversion
    wvar = np.zeros((2, k, 3))
    wmean = np.zeros((2, k, 3))
    wsums = np.zeros((2, k))
    for ai in range(2):
        wmask = gamma[:, 1:, :] * sel[ai][..., None]
        wsum = wmask.sum(axis=(0, 1))
        xw = np.einsum("ntk,ntc->kc", wmask, packed.obs)
        xxw = np.einsum("ntk,ntc->kc", wmask, packed.obs**2)
        ok = wsum > 1e-12
        mu = np.where(ok[:, None], xw / np.where(ok, wsum, 1.0)[:, None], mean[ai])
        wmean[ai] = mu
        wvar[ai] = np.where(
            ok[:, None],
            np.maximum(xxw / np.where(ok, wsum, 1.0)[:, None] - mu**2, 0.0),
            np.inf,
        )
        wsums[ai] = wsum
    return trans, mean, std, initial, trace, converged, wmean, wvar, wsums


def _count_params(model: WorkloadModel) -> int:
    k = model.num_states
    p = 2 * k * (k - 1) + (k - 1)
    for a in SERVICING_ACTIONS:
        for w in range(k):
            for c in model.emissions[a][w]:
                p += 2 if c.kind == "gaussian" else 1
    return p


def em_fit(dataset: list[TaskTrace], num_states: int, config: EmConfig | None = None) -> FitReport:
    """Fit the workload IOHMM by expectation-maximization.

    Runs ``config.restarts`` independently seeded fits and keeps the best
    final log-likelihood. Each iteration alternates a forward-backward E-step
    (conditioned on the per-step action sequence) with closed-form M-step
    updates of the per-action transition rows and per-(state, action, channel)
    Gaussian moments. Variances are floored during iteration; channels whose
    final weighted variance falls below the floor are converted to point
    masses at the weighted mean.

    Delegation steps occupy a time slot with the identity transition but
    contribute neither emission nor transition statistics.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    if num_states < 1:
        raise ValueError("num_states must be positive")
    config = config or EmConfig()
    if config.max_iters < 1 or config.restarts < 1:
        raise ValueError("max_iters and restarts must be positive")
    packed = _pack(dataset)
    k = num_states

    master = np.random.SeedSequence(config.seed)
    children = master.spawn(max(config.restarts, 1))
    best = None
    restart_traces: list[list[float]] = []
    for child in children:
        rng = np.random.default_rng(child)
        result = _run_restart(packed, k, config, rng)
        restart_traces.append(result[4])
        if best is None or result[4][-1] > best[4][-1]:
            best = result
    trans, mean, std, initial, trace, converged, wmean, wvar, wsums = best

    warnings: list[str] = []
    rt_support = np.unique(packed.obs[..., 2][packed.servicing]).size
    if rt_support < k:
        warnings.append(
            f"{k} states requested but only {rt_support} distinct reaction times observed"
        )
    total_mass = wsums.sum()
    for j in range(k):
        if wsums[:, j].sum() < 1e-6 * total_mass:
            warnings.append(f"state {j} received negligible responsibility mass")

    emissions: dict[Action, list] = {}
    for ai, a in enumerate(SERVICING_ACTIONS):
        per_state = []
        for w in range(k):
            chans = []
            for ch in range(3):
                if config.convert_point_mass and wvar[ai, w, ch] < config.variance_floor:
                    chans.append(EmissionChannel.point_mass(float(wmean[ai, w, ch])))
                else:
                    chans.append(
                        EmissionChannel.gaussian(float(mean[ai, w, ch]), float(std[ai, w, ch]))
                    )
            per_state.append(tuple(chans))
        emissions[a] = per_state

    model = WorkloadModel(
        num_states=k,
        transitions={Action.N: trans[0], Action.H: trans[1]},
        emissions=emissions,
        initial=initial,
    ).canonicalized()

    return FitReport(
        model=model,
        loglik_trace=trace,
        num_params=_count_params(model),
        num_trajectories=len(dataset),
        converged=converged,
        warnings=warnings,
        restart_traces=restart_traces,
    )


def information_criteria(report: FitReport, normalized: bool = False) -> tuple[float, float]:
    """AIC and BIC for a fitted model.

    aic = 2p - 2 log L, bic = p log(n_o) - 2 log L with n_o the number of
    observation trajectories. With ``normalized=True`` both are divided by
    n_o (the per-trajectory reporting convention).
    """
    p = report.num_params
    ll = report.loglik
    n_o = report.num_trajectories
    aic = 2.0 * p - 2.0 * ll
    bic = p * math.log(n_o) - 2.0 * ll
    if normalized:
        aic /= n_o
        bic /= n_o
    return aic, bic


def select_model(
    dataset: list[TaskTrace],
    candidates: list[int],
    config: EmConfig | None = None,
    criterion: str = "aic",
    normalized: bool = False,
) -> SelectionResult:
    """Fit every candidate state count and pick the criterion minimizer.

    Ties break toward the smaller state count. Individual fit failures are
    recorded and skipped rather than aborting the sweep.
    """
    if not candidates:
        raise ValueError("need at least one candidate state count")
    if criterion not in ("aic", "bic"):
        raise ValueError(f"unknown criterion {criterion!r}")
    reports: dict[int, FitReport] = {}
    errors: dict[int, str] = {}
    table: list[dict] = []
    for k in sorted(set(candidates)):
        try:
            reports[k] = em_fit(dataset, k, config)
        except (ValueError, DegenerateEvidenceError) as exc:
            errors[k] = str(exc)
            continue
        aic, bic = information_criteria(reports[k], normalized=normalized)
        table.append(
            {
                "k": k,
                "aic": aic,
                "bic": bic,
                "loglik": reports[k].loglik,
                "num_params": reports[k].num_params,
                "converged": reports[k].converged,
            }
        )
    if not reports:
        raise ValueError(f"every candidate fit failed: {errors}")
    best_k = min(table, key=lambda row: row[criterion])["k"]
    return SelectionResult(
        best_k=best_k, reports=reports, table=table, criterion=criterion, errors=errors
    )
