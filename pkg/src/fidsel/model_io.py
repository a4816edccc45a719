"""File formats: trace datasets (JSONL), model and policy documents (JSON).

All writers are deterministic: fixed key order, fixed float formatting.
Model files use 17 significant digits so a write/read round trip is lossless;
policy exports use 12 per their format contract.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .workload import (
    Action,
    EmissionChannel,
    ObservationTriple,
    TaskTrace,
    TraceStep,
    WorkloadModel,
)

MODEL_FORMAT_VERSION = 1


class DataFormatError(ValueError):
    """A file does not conform to its documented format."""


def format_float(x: float, sigfigs: int) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {x} cannot be serialized")
    out = format(float(x), f".{sigfigs}g")
    # normalize "-0" and bare exponents so output is stable across platforms
    if out == "-0":
        out = "0"
    return out


def dumps_canonical(obj: Any, sigfigs: int = 17, indent: int | None = 2) -> str:
    """Serialize to JSON with deterministic float formatting and key order."""

    def render(node: Any, depth: int) -> str:
        pad = "" if indent is None else "\n" + " " * (indent * (depth + 1))
        close = "" if indent is None else "\n" + " " * (indent * depth)
        sep = "," if indent is None else ","
        if isinstance(node, dict):
            if not node:
                return "{}"
            items = [
                f"{pad}{json.dumps(str(k))}: {render(v, depth + 1)}" for k, v in node.items()
            ]
            return "{" + sep.join(items) + close + "}"
        if isinstance(node, (list, tuple, np.ndarray)):
            seq = list(node)
            if not seq:
                return "[]"
            items = [f"{pad}{render(v, depth + 1)}" for v in seq]
            return "[" + sep.join(items) + close + "]"
        if isinstance(node, bool) or node is None:
            return json.dumps(node)
        if isinstance(node, (int, np.integer)):
            return str(int(node))
        if isinstance(node, (float, np.floating)):
            return format_float(float(node), sigfigs)
        if isinstance(node, str):
            return json.dumps(node)
        raise TypeError(f"cannot serialize {type(node)}")

    return render(obj, 0) + ("\n" if indent is not None else "")


def _channel_to_dict(c: EmissionChannel) -> dict:
    if c.kind == "gaussian":
        return {"kind": "gaussian", "mean": c.mean, "std": c.std}
    return {"kind": "point_mass", "point": c.point}


def _channel_from_dict(d: dict) -> EmissionChannel:
    kind = d.get("kind")
    if kind == "gaussian":
        return EmissionChannel.gaussian(float(d["mean"]), float(d["std"]))
    if kind == "point_mass":
        return EmissionChannel.point_mass(float(d["point"]))
    raise DataFormatError(f"unknown emission channel kind {kind!r}")


def model_to_dict(model: WorkloadModel) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "num_states": model.num_states,
        "initial": list(model.initial),
        "transitions": {
            a.value: [list(row) for row in model.transitions[a]] for a in (Action.N, Action.H)
        },
        "emissions": {
            a.value: [
                [_channel_to_dict(c) for c in model.emissions[a][w]]
                for w in range(model.num_states)
            ]
            for a in (Action.N, Action.H)
        },
    }


def model_from_dict(doc: dict) -> WorkloadModel:
    try:
        if int(doc["format_version"]) != MODEL_FORMAT_VERSION:
            raise DataFormatError(f"unsupported model format_version {doc['format_version']}")
        k = int(doc["num_states"])
        transitions = {
            Action(a): np.array(doc["transitions"][a], dtype=float) for a in ("N", "H")
        }
        emissions = {
            Action(a): [
                tuple(_channel_from_dict(c) for c in doc["emissions"][a][w]) for w in range(k)
            ]
            for a in ("N", "H")
        }
        initial = np.array(doc["initial"], dtype=float)
    except (KeyError, TypeError, IndexError) as exc:
        raise DataFormatError(f"malformed model document: {exc}") from exc
    try:
        return WorkloadModel(k, transitions, emissions, initial)
    except ValueError as exc:
        raise DataFormatError(f"invalid model parameters: {exc}") from exc


def save_model(model: WorkloadModel, path: str | Path) -> None:
    Path(path).write_text(dumps_canonical(model_to_dict(model)))


def load_model(path: str | Path) -> WorkloadModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    return model_from_dict(doc)


def write_traces(traces: list[TaskTrace], path: str | Path) -> None:
    """Write a dataset as line-delimited JSON, one record per step."""
    lines = []
    for i, trace in enumerate(traces):
        sid = trace.session_id or f"session-{i:04d}"
        for t, step in enumerate(trace.steps):
            rec: dict[str, Any] = {"session_id": sid, "step": t, "action": step.action.value}
            if step.observation is None:
                rec.update({"o1": None, "o2": None, "o3": None})
            else:
                rec.update(
                    {
                        "o1": step.observation.o1,
                        "o2": step.observation.o2,
                        "o3": step.observation.o3,
                    }
                )
            lines.append(dumps_canonical(rec, indent=None))
    Path(path).write_text("\n".join(lines) + "\n")


def read_traces(path: str | Path) -> list[TaskTrace]:
    """Parse a trace dataset, reporting malformed records by line number."""
    sessions: dict[str, list[tuple[int, TraceStep]]] = {}
    order: list[str] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                action = Action(rec["action"])
                if action.is_servicing:
                    obs = ObservationTriple(
                        float(rec["o1"]), float(rec["o2"]), float(rec["o3"])
                    )
                else:
                    obs = None
                step = TraceStep(action, obs)
                sid = str(rec["session_id"])
                step_idx = int(rec["step"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad trace record: {exc}") from exc
            if sid not in sessions:
                sessions[sid] = []
                order.append(sid)
            sessions[sid].append((step_idx, step))
    if not sessions:
        raise DataFormatError(f"{path}: empty trace dataset")
    traces = []
    for sid in order:
        steps = [s for _, s in sorted(sessions[sid], key=lambda p: p[0])]
        traces.append(TaskTrace(steps=steps, session_id=sid))
    return traces
