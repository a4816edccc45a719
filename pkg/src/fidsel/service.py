"""Live decision-support sessions over HTTP/JSON.

Each session owns a queue, a grid-snapped workload belief, and derived
randomness streams; the server recommends actions from the loaded policy,
ingests observation results from the console, and pushes queue/recommendation
events. All dynamics (arrival sampling, belief updates, rewards) share the
simulator's code paths, so a scripted session replays an episode exactly.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from . import __version__, model_io
from .policy import (
    BeliefGrid,
    BeliefTracker,
    PolicyTable,
    QueueParams,
    RewardWeights,
    discretize_observations,
    load_policy,
)
from .simulate import draw_task_setup, episode_streams, write_episode_log, EpisodeLog, TaskRecord
from .workload import Action, DEFAULT_CHANNEL_STEPS, ObservationTriple, WorkloadModel

SCHEMA_VERSION = 1


@dataclass
class ServiceConfig:
    model: WorkloadModel
    policy: PolicyTable
    params: QueueParams
    weights: RewardWeights = field(default_factory=RewardWeights)
    channel_steps: tuple[float, float, float] = DEFAULT_CHANNEL_STEPS
    mode: str = "enforced"  # "enforced" | "advisory"
    task_budget: int = 48
    initial_queue: int = 1
    log_dir: Path | None = None
    static_dir: Path | None = None
    port: int = 8750
    model_sha256: str = ""
    policy_sha256: str = ""

    def __post_init__(self):
        if self.mode not in ("enforced", "advisory"):
            raise ValueError("mode must be 'enforced' or 'advisory'")
        if self.policy.max_length != self.params.max_length:
            raise ValueError(
                f"policy solved for L={self.policy.max_length} but queue configured "
                f"with L={self.params.max_length}"
            )
        if not self.model_sha256:
            self.model_sha256 = hashlib.sha256(
                model_io.dumps_canonical(model_io.model_to_dict(self.model)).encode()
            ).hexdigest()
        if not self.policy_sha256:
            from .policy import policy_to_dict

            self.policy_sha256 = hashlib.sha256(
                model_io.dumps_canonical(policy_to_dict(self.policy), sigfigs=12).encode()
            ).hexdigest()

    @property
    def grid(self) -> BeliefGrid:
        return self.policy.grid

    @classmethod
    def from_file(cls, path: str | Path, env: dict[str, str] | None = None) -> "ServiceConfig":
        """Load a JSON config; FIDSEL_* environment variables override paths
        and the port."""
        env = dict(os.environ if env is None else env)
        path = Path(path)
        doc = json.loads(path.read_text())
        base = path.parent
        model_path = Path(env.get("FIDSEL_MODEL", base / doc["model_path"]))
        policy_path = Path(env.get("FIDSEL_POLICY", base / doc["policy_path"]))
        model = model_io.load_model(model_path)
        policy = load_policy(policy_path)
        params = QueueParams(
            arrival_rate=float(doc.get("arrival_rate", 1.0 / 12.0)),
            max_length=int(doc.get("max_queue_length", policy.max_length)),
            duration_high=float(doc.get("duration_high", 10.0)),
            duration_normal=float(doc.get("duration_normal", 10.0 / 3.0)),
            wait_epoch=doc.get("wait_epoch"),
        )
        log_dir = env.get("FIDSEL_LOG_DIR", doc.get("log_dir"))
        static_dir = doc.get("static_dir")
        return cls(
            model=model,
            policy=policy,
            params=params,
            weights=RewardWeights(
                alpha1=float(doc.get("alpha1", 100.0)),
                alpha2=float(doc.get("alpha2", 30.0)),
                alpha3=float(doc.get("alpha3", 2.0)),
                delegation_accuracy=float(doc.get("delegation_accuracy", 0.30)),
            ),
            mode=doc.get("mode", "enforced"),
            task_budget=int(doc.get("task_budget", 48)),
            initial_queue=int(doc.get("initial_queue", 1)),
            log_dir=Path(log_dir) if log_dir else None,
            static_dir=Path(base / static_dir) if static_dir else None,
            port=int(env.get("FIDSEL_PORT", doc.get("port", 8750))),
            model_sha256=hashlib.sha256(model_path.read_bytes()).hexdigest(),
            policy_sha256=hashlib.sha256(policy_path.read_bytes()).hexdigest(),
        )


class CreateSessionRequest(BaseModel):
    seed: int | None = None
    mode: str | None = None
    initial_queue: int | None = None
    task_budget: int | None = None
    grid_step: float | None = None


class ObservationBody(BaseModel):
    o1: float
    o2: float
    o3: float


class SubmitResultRequest(BaseModel):
    task_id: str
    action: str
    observation: ObservationBody | None = None


class Session:
    def __init__(self, config: ServiceConfig, req: CreateSessionRequest):
        if req.grid_step is not None and abs(req.grid_step - config.grid.step) > 1e-12:
            raise HTTPException(
                status_code=409,
                detail=(
                    f"policy was built with grid step {config.grid.step}; "
                    f"session requested {req.grid_step}"
                ),
            )
        mode = req.mode or config.mode
        if mode not in ("enforced", "advisory"):
            raise HTTPException(status_code=422, detail=f"unknown mode {mode!r}")
        self.id = uuid.uuid4().hex[:12]
        self.config = config
        self.mode = mode
        self.seed = req.seed if req.seed is not None else int.from_bytes(os.urandom(4), "big")
        streams = episode_streams(self.seed)
        self._arrivals = streams["arrivals"]
        self._tasks = streams["tasks"]
        self.table = discretize_observations(config.model, config.channel_steps)
        self.tracker = BeliefTracker(config.model, self.table, config.grid)
        self.q = min(
            req.initial_queue if req.initial_queue is not None else config.initial_queue,
            config.params.max_length,
        )
        self.budget = req.task_budget if req.task_budget is not None else config.task_budget
        self.clock_ms = 0.0
        self.score = 0.0
        self.task_count = 0
        self.wait_epochs = 0
        self.history: list[dict[str, Any]] = []
        self.records: list[TaskRecord] = []
        self.in_flight: dict[str, Any] | None = None
        self.done = False
        self.events: list[dict[str, Any]] = []
        self.lock = threading.Lock()
        self._task_seq = 0
        self._log_flushed = False
        self._push("session_created", {"seed": self.seed, "mode": self.mode})

    # -- helpers ---------------------------------------------------------

    def _push(self, kind: str, data: dict[str, Any]):
        self.events.append(
            {"seq": len(self.events), "type": kind, "t_ms": round(self.clock_ms, 3), "data": data}
        )

    def recommendation(self) -> str:
        if self.done:
            return "done"
        return self.config.policy.lookup(self.q, self.tracker.b_h)

    def snapshot(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": self.id,
            "mode": self.mode,
            "q": self.q,
            "b_h": self.tracker.b_h,
            "score": self.score,
            "task_count": self.task_count,
            "task_budget": self.budget,
            "clock_ms": round(self.clock_ms, 3),
            "history_length": len(self.history),
            "done": self.done,
            "recommendation": self.recommendation(),
            "grid_step": self.config.grid.step,
            "max_queue_length": self.config.params.max_length,
            "action_set": list(self.config.policy.action_set),
        }

    # -- endpoint bodies ---------------------------------------------------

    def next_task(self) -> dict[str, Any]:
        if self.done:
            raise HTTPException(status_code=409, detail="session is complete")
        if self.in_flight is not None:
            raise HTTPException(status_code=409, detail="a task is already in flight")
        params = self.config.params
        if self.q == 0:
            arr = int(self._arrivals.poisson(params.arrival_rate * params.epoch))
            self.q = min(self.q + arr, params.max_length)
            self.clock_ms += params.epoch * 1000.0
            self.wait_epochs += 1
            self._push("arrivals", {"count": arr, "q": self.q, "during": "wait"})
            return {
                "schema_version": SCHEMA_VERSION,
                "wait": True,
                "epoch_s": params.epoch,
                "arrivals": arr,
                "q": self.q,
                "b_h": self.tracker.b_h,
                "expected_next_arrival_s": 1.0 / params.arrival_rate,
                "descriptor": None,
                "recommendation": None,
            }
        onset, targets, stream_seed = draw_task_setup(self._tasks)
        task_id = f"task-{self._task_seq:04d}"
        self._task_seq += 1
        rec = self.recommendation()
        descriptor = {
            "task_id": task_id,
            "durations_s": {"N": params.duration_normal, "H": params.duration_high},
            "cue_onset_frac": onset,
            "target_count": targets,
            "stream_seed": stream_seed,
        }
        self.in_flight = descriptor
        self._push("task_issued", {"task_id": task_id, "recommendation": rec})
        return {
            "schema_version": SCHEMA_VERSION,
            "wait": False,
            "descriptor": descriptor,
            "recommendation": rec,
            "q": self.q,
            "b_h": self.tracker.b_h,
        }

    def submit_result(self, req: SubmitResultRequest) -> dict[str, Any]:
        if self.done:
            raise HTTPException(status_code=409, detail="session is complete")
        if self.in_flight is None:
            raise HTTPException(
                status_code=409, detail="no task in flight (duplicate or stale submission)"
            )
        if req.task_id != self.in_flight["task_id"]:
            raise HTTPException(
                status_code=404, detail=f"unknown task id {req.task_id!r}"
            )
        try:
            action = Action(req.action)
        except ValueError:
            raise HTTPException(status_code=422, detail=f"unknown action {req.action!r}")
        if action.value not in self.config.policy.action_set:
            raise HTTPException(
                status_code=422, detail=f"action {action.value} not in the session action set"
            )
        rec = self.config.policy.lookup(self.q, self.tracker.b_h)
        if self.mode == "enforced" and action.value != rec:
            raise HTTPException(
                status_code=409,
                detail=f"enforced mode: action must follow the recommendation {rec}",
            )

        params = self.config.params
        q_before = self.q
        b_before = self.tracker.b_h
        if action is Action.D:
            if req.observation is not None:
                raise HTTPException(status_code=422, detail="delegation carries no observation")
            obs = None
            reward = self.config.weights.delegation_reward(self.q)
            self.q -= 1
            fallback = False
        else:
            if req.observation is None:
                raise HTTPException(status_code=422, detail="servicing requires an observation")
            try:
                obs = ObservationTriple(
                    req.observation.o1, req.observation.o2, req.observation.o3
                )
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc))
            reward = self.config.weights.task_reward(obs, self.q)
            _, fallback = self.tracker.update(action, obs)
            duration = params.duration(action)
            arr = int(self._arrivals.poisson(params.arrival_rate * duration))
            self.q = min(self.q - 1 + arr, params.max_length)
            self.clock_ms += duration * 1000.0
            self._push("arrivals", {"count": arr, "q": self.q, "during": action.value})

        self.score += reward
        record = {
            "task_id": req.task_id,
            "action": action.value,
            "q_before": q_before,
            "b_before": b_before,
            "b_after": self.tracker.b_h,
            "reward": reward,
            "override": action.value != rec,
            "observation": None if obs is None else {"o1": obs.o1, "o2": obs.o2, "o3": obs.o3},
        }
        self.history.append(record)
        self.records.append(
            TaskRecord(
                index=self.task_count,
                q_before=q_before,
                true_workload=-1,  # unknown for a live operator
                belief_high=b_before,
                action=action,
                observation=obs,
                reward=reward,
                belief_fallback=fallback,
            )
        )
        self.task_count += 1
        self.in_flight = None
        if self.task_count >= self.budget:
            self.done = True
            self._push("session_done", {"score": self.score})
            self.flush_log()
        else:
            self._push(
                "recommendation",
                {"q": self.q, "b_h": self.tracker.b_h, "action": self.recommendation()},
            )
        return {
            "schema_version": SCHEMA_VERSION,
            "task_id": req.task_id,
            "action": action.value,
            "reward": reward,
            "q": self.q,
            "b_h": self.tracker.b_h,
            "score": self.score,
            "task_count": self.task_count,
            "done": self.done,
        }

    def flush_log(self):
        if self._log_flushed or self.config.log_dir is None or not self.records:
            return
        self.config.log_dir.mkdir(parents=True, exist_ok=True)
        log = EpisodeLog(
            records=self.records,
            score=self.score,
            wait_epochs=self.wait_epochs,
            saturated_arrivals=0,
            belief_fallbacks=self.tracker.fallbacks,
            final_queue=self.q,
            final_belief=self.tracker.b_h,
        )
        write_episode_log(log, self.config.log_dir / f"session-{self.id}.jsonl")
        self._log_flushed = True


def create_app(config: ServiceConfig) -> FastAPI:
    from contextlib import asynccontextmanager

    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        with registry_lock:
            open_sessions = list(sessions.values())
        for session in open_sessions:
            with session.lock:
                session.flush_log()

    app = FastAPI(title="fidsel session service", version=__version__, lifespan=lifespan)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.sessions = sessions
    app.state.config = config

    def get_session(session_id: str) -> Session:
        with registry_lock:
            session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")
        return session

    @app.get("/health")
    def health():
        return {
            "schema_version": SCHEMA_VERSION,
            "version": __version__,
            "mode": config.mode,
            "artifacts": {
                "model_sha256": config.model_sha256,
                "policy_sha256": config.policy_sha256,
            },
        }

    @app.post("/sessions", status_code=201)
    def create_session(req: CreateSessionRequest):
        session = Session(config, req)
        with registry_lock:
            sessions[session.id] = session
        return session.snapshot()

    @app.get("/sessions/{session_id}")
    def get_state(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return session.snapshot()

    @app.post("/sessions/{session_id}/next")
    def next_task(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return session.next_task()

    @app.post("/sessions/{session_id}/result")
    def submit_result(session_id: str, req: SubmitResultRequest):
        session = get_session(session_id)
        with session.lock:
            return session.submit_result(req)

    @app.get("/sessions/{session_id}/events")
    async def events(session_id: str, after: int = 0, follow: bool = True):
        session = get_session(session_id)

        async def stream():
            idx = max(after, 0)
            while True:
                with session.lock:
                    backlog = session.events[idx:]
                    done = session.done
                for ev in backlog:
                    yield f"id: {ev['seq']}\nevent: {ev['type']}\ndata: {json.dumps(ev)}\n\n"
                idx += len(backlog)
                if not follow or done:
                    return
                await asyncio.sleep(0.05)

        return StreamingResponse(stream(), media_type="text/event-stream")

    if config.static_dir is not None and Path(config.static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=str(config.static_dir), html=True),
                  name="console")

    return app


def run_service(config: ServiceConfig, host: str = "127.0.0.1") -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=config.port, log_level="info")
