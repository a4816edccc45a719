import numpy as np
import pytest
from fastapi.testclient import TestClient

from fidsel.policy import BeliefGrid, QueueParams, RewardWeights, build_belief_mdp, \
    discretize_observations, value_iteration
from fidsel.service import ServiceConfig, create_app
from fidsel.simulate import (
    SimConfig,
    TablePolicy,
    episode_streams,
    run_episode,
    sample_operator_observation,
)
from fidsel.workload import Action, EmissionChannel, ObservationTriple, WorkloadModel


@pytest.fixture(scope="module")
def service2(scenario, policy2):
    config = ServiceConfig(
        model=scenario.model, policy=policy2, params=scenario.params,
        weights=scenario.weights, mode="enforced", task_budget=48,
    )
    return config, TestClient(create_app(config))


@pytest.fixture(scope="module")
def service3(scenario, policy3):
    config = ServiceConfig(
        model=scenario.model, policy=policy3, params=scenario.params,
        weights=scenario.weights, mode="advisory", task_budget=48,
    )
    return config, TestClient(create_app(config))


def scripted_replay(client, scenario, seed, tasks, missed_cue_prob=0.02):
    """Synthetic operator driving a live session; mirrors run_episode's draws."""
    gt = scenario.model
    op = episode_streams(seed)["operator"]
    w = int(op.choice(gt.num_states, p=gt.initial))
    resp = client.post("/sessions", json={"seed": seed, "task_budget": tasks})
    assert resp.status_code == 201
    sid = resp.json()["session_id"]
    triples = []
    score = None
    while True:
        nxt = client.post(f"/sessions/{sid}/next")
        assert nxt.status_code == 200
        body = nxt.json()
        if body["wait"]:
            continue
        q, b_h = body["q"], body["b_h"]
        rec = body["recommendation"]
        desc = body["descriptor"]
        action = Action(rec)
        if action is Action.D:
            payload = {"task_id": desc["task_id"], "action": "D", "observation": None}
        else:
            w = int(op.choice(gt.num_states, p=gt.transition(action)[w]))
            obs = sample_operator_observation(gt, w, action, op)
            if op.random() < missed_cue_prob:
                censored = (1.0 - desc["cue_onset_frac"]) * desc["durations_s"][rec] * 1000.0
                obs = ObservationTriple(obs.o1, obs.o2, censored)
            payload = {
                "task_id": desc["task_id"],
                "action": rec,
                "observation": {"o1": obs.o1, "o2": obs.o2, "o3": obs.o3},
            }
        sub = client.post(f"/sessions/{sid}/result", json=payload)
        assert sub.status_code == 200
        body = sub.json()
        triples.append((q, b_h, body["reward"]))
        if body["done"]:
            score = body["score"]
            break
    return sid, triples, score


class TestHealthAndCreate:
    def test_health_reports_artifacts(self, service2):
        _, client = service2
        body = client.get("/health").json()
        assert body["version"]
        assert len(body["artifacts"]["model_sha256"]) == 64
        assert len(body["artifacts"]["policy_sha256"]) == 64

    def test_initial_belief_snaps_paper_vector(self, service2):
        _, client = service2
        snap = client.post("/sessions", json={"seed": 1}).json()
        assert snap["b_h"] == pytest.approx(0.3)  # snap of initial 0.338
        assert snap["q"] == 1
        assert snap["score"] == 0.0
        assert snap["history_length"] == 0

    def test_same_seed_same_snapshot(self, service2):
        _, client = service2
        s1 = client.post("/sessions", json={"seed": 9}).json()
        s2 = client.post("/sessions", json={"seed": 9}).json()
        for key in ("q", "b_h", "score", "recommendation", "task_count"):
            assert s1[key] == s2[key]

    def test_grid_mismatch_rejected(self, service2):
        _, client = service2
        resp = client.post("/sessions", json={"seed": 1, "grid_step": 0.05})
        assert resp.status_code == 409
        assert "grid step" in resp.json()["detail"]

    def test_policy_queue_mismatch_rejected(self, scenario, policy2):
        with pytest.raises(ValueError, match="L="):
            ServiceConfig(
                model=scenario.model, policy=policy2,
                params=QueueParams(arrival_rate=0.15, max_length=5),
            )


class TestNextTask:
    def test_recommendation_matches_policy(self, service2, policy2):
        _, client = service2
        snap = client.post("/sessions", json={"seed": 3}).json()
        sid = snap["session_id"]
        body = client.post(f"/sessions/{sid}/next").json()
        assert body["wait"] is False
        assert body["recommendation"] == policy2.lookup(body["q"], body["b_h"])
        desc = body["descriptor"]
        assert 0.25 <= desc["cue_onset_frac"] <= 0.75
        assert desc["durations_s"]["N"] == pytest.approx(10.0 / 3.0)
        assert desc["durations_s"]["H"] == pytest.approx(10.0)

    def test_wait_signal_on_empty_queue(self, service2):
        _, client = service2
        snap = client.post("/sessions", json={"seed": 4, "initial_queue": 0}).json()
        sid = snap["session_id"]
        body = client.post(f"/sessions/{sid}/next").json()
        assert body["wait"] is True
        assert body["descriptor"] is None
        assert body["expected_next_arrival_s"] == pytest.approx(1.0 / 0.15)

    def test_double_next_conflicts(self, service2):
        _, client = service2
        sid = client.post("/sessions", json={"seed": 5}).json()["session_id"]
        first = client.post(f"/sessions/{sid}/next")
        while first.json()["wait"]:
            first = client.post(f"/sessions/{sid}/next")
        second = client.post(f"/sessions/{sid}/next")
        assert second.status_code == 409


class TestSubmitResult:
    def _issue(self, client, sid):
        body = client.post(f"/sessions/{sid}/next").json()
        while body["wait"]:
            body = client.post(f"/sessions/{sid}/next").json()
        return body

    def test_delegation_reward_and_frozen_belief(self, service3):
        _, client = service3
        snap = client.post("/sessions", json={"seed": 6, "initial_queue": 4}).json()
        sid = snap["session_id"]
        b0 = snap["b_h"]
        body = self._issue(client, sid)
        sub = client.post(
            f"/sessions/{sid}/result",
            json={"task_id": body["descriptor"]["task_id"], "action": "D", "observation": None},
        ).json()
        assert sub["reward"] == pytest.approx(30.0 - 2.0 * 3)
        assert sub["b_h"] == b0
        assert sub["q"] == 3

    def test_uninformative_observation_propagates_only(self):
        g = EmissionChannel.gaussian
        same = (g(0.5, 0.04), g(1.0, 0.3), g(500.0, 40.0))
        trans = {
            Action.N: np.array([[0.7, 0.3], [0.4, 0.6]]),
            Action.H: np.array([[0.9, 0.1], [0.2, 0.8]]),
        }
        m = WorkloadModel(2, trans, {a: [same, same] for a in trans}, np.array([0.5, 0.5]))
        params = QueueParams(arrival_rate=0.1, max_length=4)
        table = discretize_observations(m)
        mdp = build_belief_mdp(m, table, params, RewardWeights(), (Action.N, Action.H))
        policy = value_iteration(mdp, gamma=0.9, tol=1e-8).policy
        config = ServiceConfig(model=m, policy=policy, params=params, mode="advisory")
        client = TestClient(create_app(config))
        snap = client.post("/sessions", json={"seed": 7}).json()
        sid = snap["session_id"]
        grid = BeliefGrid(0.1)
        b = np.array([1 - snap["b_h"], snap["b_h"]])
        body = client.post(f"/sessions/{sid}/next").json()
        sub = client.post(
            f"/sessions/{sid}/result",
            json={"task_id": body["descriptor"]["task_id"], "action": "N",
                  "observation": {"o1": 0.5, "o2": 1.0, "o3": 500.0}},
        ).json()
        want = grid.snap(float((b @ trans[Action.N])[1]))
        assert sub["b_h"] == pytest.approx(want)

    def test_duplicate_submission_conflict(self, service3):
        _, client = service3
        sid = client.post("/sessions", json={"seed": 8, "initial_queue": 3}).json()["session_id"]
        body = self._issue(client, sid)
        payload = {"task_id": body["descriptor"]["task_id"], "action": "D", "observation": None}
        assert client.post(f"/sessions/{sid}/result", json=payload).status_code == 200
        assert client.post(f"/sessions/{sid}/result", json=payload).status_code == 409

    def test_unknown_task_rejected(self, service3):
        _, client = service3
        sid = client.post("/sessions", json={"seed": 9, "initial_queue": 3}).json()["session_id"]
        self._issue(client, sid)
        resp = client.post(
            f"/sessions/{sid}/result",
            json={"task_id": "task-9999", "action": "D", "observation": None},
        )
        assert resp.status_code == 404

    def test_out_of_range_observation_rejected(self, service3):
        _, client = service3
        sid = client.post("/sessions", json={"seed": 10, "initial_queue": 3}).json()["session_id"]
        body = self._issue(client, sid)
        resp = client.post(
            f"/sessions/{sid}/result",
            json={"task_id": body["descriptor"]["task_id"], "action": "N",
                  "observation": {"o1": 1.4, "o2": 0.0, "o3": 100.0}},
        )
        assert resp.status_code == 422

    def test_enforced_mode_rejects_override(self, service2):
        _, client = service2
        sid = client.post("/sessions", json={"seed": 11}).json()["session_id"]
        body = self._issue(client, sid)
        rec = body["recommendation"]
        other = "H" if rec == "N" else "N"
        resp = client.post(
            f"/sessions/{sid}/result",
            json={"task_id": body["descriptor"]["task_id"], "action": other,
                  "observation": {"o1": 0.5, "o2": 0.0, "o3": 400.0}},
        )
        assert resp.status_code == 409

    def test_advisory_mode_records_override(self, service3, policy3):
        _, client = service3
        sid = client.post("/sessions", json={"seed": 12}).json()["session_id"]
        body = self._issue(client, sid)
        rec = body["recommendation"]
        other = "H" if rec == "N" else "N"
        sub = client.post(
            f"/sessions/{sid}/result",
            json={"task_id": body["descriptor"]["task_id"], "action": other,
                  "observation": {"o1": 0.5, "o2": 0.0, "o3": 400.0}},
        )
        assert sub.status_code == 200
        state = client.get(f"/sessions/{sid}").json()
        assert state["history_length"] == 1


class TestGetStateAndEvents:
    def test_fresh_session_state(self, service2):
        _, client = service2
        sid = client.post("/sessions", json={"seed": 13}).json()["session_id"]
        state = client.get(f"/sessions/{sid}").json()
        assert state["history_length"] == 0
        assert state["score"] == 0.0
        assert not state["done"]

    def test_unknown_session_404(self, service2):
        _, client = service2
        assert client.get("/sessions/nope").status_code == 404
        assert client.post("/sessions/nope/next").status_code == 404

    def test_events_stream_backlog(self, service3):
        _, client = service3
        sid = client.post("/sessions", json={"seed": 14, "initial_queue": 2}).json()["session_id"]
        body = client.post(f"/sessions/{sid}/next").json()
        client.post(
            f"/sessions/{sid}/result",
            json={"task_id": body["descriptor"]["task_id"], "action": "D", "observation": None},
        )
        resp = client.get(f"/sessions/{sid}/events", params={"follow": "false"})
        assert resp.status_code == 200
        text = resp.text
        assert "session_created" in text
        assert "task_issued" in text
        assert "recommendation" in text

    def test_snapshot_after_one_result(self, service3):
        _, client = service3
        sid = client.post("/sessions", json={"seed": 15, "initial_queue": 2}).json()["session_id"]
        body = client.post(f"/sessions/{sid}/next").json()
        client.post(
            f"/sessions/{sid}/result",
            json={"task_id": body["descriptor"]["task_id"], "action": "D", "observation": None},
        )
        state = client.get(f"/sessions/{sid}").json()
        assert state["history_length"] == 1
        assert state["task_count"] == 1


class TestConcurrentReads:
    def test_get_state_never_returns_torn_snapshots(self, scenario, policy2):
        import threading

        config = ServiceConfig(
            model=scenario.model, policy=policy2, params=scenario.params,
            weights=scenario.weights, mode="enforced", task_budget=24,
        )
        client = TestClient(create_app(config))
        sid = client.post("/sessions", json={"seed": 40, "initial_queue": 5}).json()[
            "session_id"
        ]
        torn = []
        stop = threading.Event()

        def reader():
            while not stop.is_set():
                snap = client.get(f"/sessions/{sid}").json()
                if snap["history_length"] != snap["task_count"]:
                    torn.append(snap)

        threads = [threading.Thread(target=reader) for _ in range(3)]
        for t in threads:
            t.start()
        try:
            for _ in range(24):
                body = client.post(f"/sessions/{sid}/next").json()
                while body["wait"]:
                    body = client.post(f"/sessions/{sid}/next").json()
                rec = body["recommendation"]
                client.post(
                    f"/sessions/{sid}/result",
                    json={"task_id": body["descriptor"]["task_id"], "action": rec,
                          "observation": {"o1": 0.8, "o2": 0.0, "o3": 450.0}},
                )
        finally:
            stop.set()
            for t in threads:
                t.join()
        assert not torn


class TestReplayDeterminism:
    def test_five_task_session_matches_simulator(self, scenario, policy2, service2):
        _, client = service2
        seed = 20260809
        sid, triples, score = scripted_replay(client, scenario, seed, tasks=5)
        config = SimConfig(
            ground_truth=scenario.model, params=scenario.params, weights=scenario.weights,
            grid=scenario.grid, tasks_per_episode=5, episodes=1, seed=seed,
        )
        log = run_episode(config, TablePolicy(policy2), seed)
        want = [(r.q_before, r.belief_high, r.reward) for r in log.records]
        assert triples == want
        assert score == pytest.approx(log.score)

    def test_session_log_flushed_when_done(self, scenario, policy2, tmp_path):
        config = ServiceConfig(
            model=scenario.model, policy=policy2, params=scenario.params,
            weights=scenario.weights, mode="enforced", task_budget=3, log_dir=tmp_path,
        )
        client = TestClient(create_app(config))
        sid, triples, score = scripted_replay(client, scenario, seed=33, tasks=3)
        logs = list(tmp_path.glob("session-*.jsonl"))
        assert len(logs) == 1
        lines = logs[0].read_text().splitlines()
        assert len(lines) == 4  # 3 records + summary
