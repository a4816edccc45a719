import numpy as np
import pytest

from fidsel.policy import (
    WAIT,
    BeliefGrid,
    BeliefTracker,
    ImpossibleEvidenceError,
    QueueParams,
    RewardWeights,
    belief_transition,
    belief_update,
    build_belief_mdp,
    discretize_observations,
    expected_reward,
    load_policy,
    policy_from_dict,
    policy_structure_report,
    policy_to_dict,
    queue_transition,
    save_policy,
    value_iteration,
)
from fidsel.workload import Action, EmissionChannel, ObservationTriple, WorkloadModel

from .oracles import (
    enumerate_expected_reward,
    joint_table_posterior,
    poisson_series_queue,
    policy_evaluation_solve,
    quadrature_bin_probs,
)


class TestBeliefGrid:
    def test_points_cover_unit_interval(self):
        grid = BeliefGrid(0.1)
        assert grid.num_points == 11
        assert grid.points[0] == 0.0 and grid.points[-1] == 1.0
        assert np.allclose(np.diff(grid.points), 0.1)

    def test_midpoints_round_up(self):
        grid = BeliefGrid(0.1)
        assert grid.snap(0.65) == pytest.approx(0.7)
        assert grid.snap(0.05) == pytest.approx(0.1)
        assert grid.snap(0.6499) == pytest.approx(0.6)

    def test_step_must_divide_one(self):
        with pytest.raises(ValueError):
            BeliefGrid(0.3)
        BeliefGrid(0.5)
        BeliefGrid(1.0)


class TestDiscretizeObservations:
    def test_point_mass_maps_to_single_bin(self, small_model, small_table):
        vals = small_table.values[Action.N][1]
        probs = small_table.probs[Action.N][1]
        col = probs[:, 0]
        assert col.sum() == pytest.approx(1.0)
        assert (col > 0).sum() == 1
        assert vals[np.argmax(col)] == pytest.approx(0.0)

    def test_symmetric_gaussian_bins_symmetric(self):
        g = EmissionChannel.gaussian
        # mean on the lattice, support inside the valid range: perfectly symmetric
        chans = (g(0.5, 0.05), g(5.0, 0.5), g(500.0, 50.0))
        trans = {a: np.eye(1) for a in (Action.N, Action.H)}
        m = WorkloadModel(1, trans, {a: [chans] for a in trans}, np.ones(1))
        table = discretize_observations(m)
        for ch in range(3):
            col = table.probs[Action.N][ch][:, 0]
            assert np.allclose(col, col[::-1], atol=1e-12)

    def test_matches_quadrature_oracle(self, small_model, small_table):
        for a in (Action.N, Action.H):
            for ch in range(3):
                vals = small_table.values[a][ch]
                for w in range(2):
                    c = small_model.channel(w, a, ch)
                    if c.kind != "gaussian":
                        continue
                    lo, hi = (0.0, 1.0) if ch == 0 else (0.0, np.inf)
                    want = quadrature_bin_probs(c.mean, c.std, vals, small_table.steps[ch], lo, hi)
                    got = small_table.probs[a][ch][:, w]
                    assert np.abs(want - got).max() < 1e-6

    def test_per_state_probabilities_sum_to_one(self, small_table):
        for a in (Action.N, Action.H):
            for ch in range(3):
                assert np.allclose(small_table.probs[a][ch].sum(axis=0), 1.0, atol=1e-9)

    def test_triple_distribution_sums_to_one(self, small_table):
        for a in (Action.N, Action.H):
            for w in range(2):
                total = sum(p for _, p in small_table.triples(w, a))
                assert total == pytest.approx(1.0, abs=1e-9)

    def test_giant_step_collapses_to_one_bin_with_flag(self, small_model):
        table = discretize_observations(small_model, (0.05, 0.5, 1e6))
        assert any("collapsed" in flag for flag in table.collapsed)
        for a in (Action.N, Action.H):
            assert len(table.values[a][2]) == 1

    def test_steps_must_be_positive(self, small_model):
        with pytest.raises(ValueError):
            discretize_observations(small_model, (0.0, 0.5, 25.0))


class TestBeliefUpdate:
    def test_uninformative_update_propagates(self):
        g = EmissionChannel.gaussian
        same = (g(0.5, 0.04), g(1.0, 0.3), g(500.0, 40.0))
        trans = {
            Action.N: np.array([[0.7, 0.3], [0.4, 0.6]]),
            Action.H: np.eye(2),
        }
        m = WorkloadModel(2, trans, {a: [same, same] for a in trans}, np.array([0.5, 0.5]))
        table = discretize_observations(m)
        grid = BeliefGrid(0.1)
        tri, _ = table.joint(Action.N)
        b = np.array([0.4, 0.6])
        pred = b @ trans[Action.N]
        exact, snapped = belief_update(m, table, b, Action.N, tuple(tri[17]), grid)
        assert np.allclose(exact, pred, atol=1e-12)
        assert snapped == pytest.approx(grid.snap(float(pred[1])))

    def test_bayes_arithmetic_identity_transition(self):
        # p(o | w=1) = 2 p(o | w=0) at b = (1/2, 1/2) gives (1/3, 2/3), snap 0.7
        g = EmissionChannel.gaussian
        pm = EmissionChannel.point_mass
        trans = {a: np.eye(2) for a in (Action.N, Action.H)}
        emis = {
            a: [
                (pm(0.5), pm(0.0), g(400.0, 25.0 / 2.355)),
                (pm(0.5), pm(0.0), g(400.0, 2 * 25.0 / 2.355)),
            ]
            for a in (Action.N, Action.H)
        }
        m = WorkloadModel(2, trans, emis, np.array([0.5, 0.5]))
        table = discretize_observations(m)
        # craft likelihoods directly instead: use the joint machinery
        tri, joint = table.joint(Action.N)
        ratios = joint[:, 1] / np.where(joint[:, 0] > 0, joint[:, 0], np.nan)
        i = int(np.nanargmin(np.abs(ratios - 2.0)))
        assert joint[i, 1] == pytest.approx(2 * joint[i, 0], rel=5e-2)
        exact, snapped = belief_update(
            m, table, np.array([0.5, 0.5]), Action.N, tuple(tri[i]), BeliefGrid(0.1)
        )
        want = np.array([joint[i, 0], joint[i, 1]])
        want /= want.sum()
        assert np.allclose(exact, want, atol=1e-12)
        if abs(exact[1] - 2.0 / 3.0) < 1e-6:
            assert snapped == pytest.approx(0.7)

    def test_matches_joint_table_oracle(self, small_model, small_table):
        rng = np.random.default_rng(17)
        grid = BeliefGrid(0.1)
        tri, joint = small_table.joint(Action.H)
        checked = 0
        while checked < 300:
            b = rng.dirichlet([1, 1])
            i = int(rng.integers(len(tri)))
            pred = b @ small_model.transitions[Action.H]
            if (joint[i] * pred).sum() <= 0:
                continue
            exact, snapped = belief_update(
                small_model, small_table, b, Action.H, tuple(tri[i]), grid
            )
            want = joint_table_posterior(small_model.transitions[Action.H], joint[i], b)
            assert np.abs(exact - want).max() < 1e-10
            assert exact.sum() == pytest.approx(1.0, abs=1e-12)
            assert snapped in grid.points
            checked += 1

    def test_impossible_evidence_raises(self, small_model, small_table):
        with pytest.raises(ImpossibleEvidenceError):
            belief_update(
                small_model, small_table, np.array([1.0, 0.0]), Action.N,
                (0.8, 1e9, 400.0), BeliefGrid(0.1),
            )

    def test_rejects_delegation(self, small_model, small_table):
        with pytest.raises(ValueError, match="delegation"):
            belief_update(small_model, small_table, np.array([0.5, 0.5]), Action.D,
                          (0.8, 0.0, 400.0))


class TestBeliefTransition:
    def test_delegation_is_identity(self, small_model, small_table):
        grid = BeliefGrid(0.1)
        vec = belief_transition(small_model, small_table, 0.6, Action.D, grid)
        want = np.zeros(11)
        want[6] = 1.0
        assert np.array_equal(vec, want)

    def test_rows_sum_to_one(self, small_model, small_table):
        grid = BeliefGrid(0.1)
        for a in (Action.N, Action.H):
            for b in grid.points:
                vec = belief_transition(small_model, small_table, float(b), a, grid)
                assert vec.sum() == pytest.approx(1.0, abs=1e-9)
                assert (vec >= 0).all()

    def test_matches_sum_over_observations_oracle(self, small_model, small_table):
        grid = BeliefGrid(0.1)
        tri, joint = small_table.joint(Action.N)
        for b_h in (0.0, 0.3, 0.8, 1.0):
            got = belief_transition(small_model, small_table, b_h, Action.N, grid)
            b = np.array([1 - b_h, b_h])
            pred = b @ small_model.transitions[Action.N]
            want = np.zeros(grid.num_points)
            for o_probs in joint:
                po = float(o_probs @ pred)
                if po <= 0:
                    continue
                post_h = o_probs[1] * pred[1] / po
                want[grid.snap_index(post_h)] += po
            assert np.abs(got - want).max() < 1e-12

    def test_uninformative_observations_concentrate_on_propagated_prior(self):
        g = EmissionChannel.gaussian
        same = (g(0.5, 0.04), g(1.0, 0.3), g(500.0, 40.0))
        trans = {
            Action.N: np.array([[0.7, 0.3], [0.4, 0.6]]),
            Action.H: np.eye(2),
        }
        m = WorkloadModel(2, trans, {a: [same, same] for a in trans}, np.array([0.5, 0.5]))
        table = discretize_observations(m)
        grid = BeliefGrid(0.1)
        vec = belief_transition(m, table, 0.5, Action.N, grid)
        pred_h = (np.array([0.5, 0.5]) @ trans[Action.N])[1]
        want = np.zeros(11)
        want[grid.snap_index(pred_h)] = 1.0
        assert np.allclose(vec, want, atol=1e-9)


class TestQueueTransition:
    def test_delegation_removes_immediately(self):
        params = QueueParams(arrival_rate=0.1, max_length=10)
        vec = queue_transition(params, 5, Action.D)
        assert np.array_equal(vec, np.eye(11)[4])

    def test_tiny_rate_concentrates_on_decrement(self):
        params = QueueParams(arrival_rate=1e-12, max_length=6)
        vec = queue_transition(params, 3, Action.N)
        assert vec[2] == pytest.approx(1.0, abs=1e-9)

    def test_matches_poisson_series_oracle(self):
        params = QueueParams(arrival_rate=0.1, max_length=10)
        got = queue_transition(params, 3, Action.H)  # rate 0.1 * 10 s = 1.0
        want = poisson_series_queue(2, 1.0, 10)
        assert np.abs(got - want).max() < 1e-12

    def test_tail_lumps_at_max_length(self):
        params = QueueParams(arrival_rate=2.0, max_length=4)
        vec = queue_transition(params, 4, Action.H)
        assert vec.sum() == pytest.approx(1.0, abs=1e-12)
        assert vec[4] > 0.99  # rate 20: essentially all mass lumps at L

    def test_empty_queue_rejected_for_task_actions(self):
        params = QueueParams()
        for a in (Action.N, Action.H, Action.D):
            with pytest.raises(ValueError, match="q=0"):
                queue_transition(params, 0, a)

    def test_wait_only_at_empty_queue(self):
        params = QueueParams(arrival_rate=0.1, max_length=5, wait_epoch=10.0)
        vec = queue_transition(params, 0, WAIT)
        want = poisson_series_queue(0, 1.0, 5)
        assert np.abs(vec - want).max() < 1e-12
        with pytest.raises(ValueError, match="wait"):
            queue_transition(params, 2, WAIT)


class TestExpectedReward:
    def test_delegation_branch_at_defaults(self, small_table):
        w = RewardWeights()
        assert expected_reward(w, small_table, 1, 0.4, Action.D) == pytest.approx(30.0)
        assert expected_reward(w, small_table, 4, 0.9, Action.D) == pytest.approx(30 - 2 * 3)

    def test_plug_in_unit_detection(self):
        g = EmissionChannel.gaussian
        pm = EmissionChannel.point_mass
        chans = (pm(1.0), pm(0.0), g(400.0, 30.0))
        trans = {a: np.eye(2) for a in (Action.N, Action.H)}
        m = WorkloadModel(2, trans, {a: [chans, chans] for a in trans}, np.array([0.5, 0.5]))
        table = discretize_observations(m)
        got = expected_reward(RewardWeights(), table, 1, 0.5, Action.N)
        assert got == pytest.approx(100.0 - 2.0)

    def test_matches_enumeration_oracle(self, small_table):
        rng = np.random.default_rng(3)
        for _ in range(10):
            w = RewardWeights(
                alpha1=float(10 + 90 * rng.random()),
                alpha2=float(1 + 30 * rng.random()),
                alpha3=float(0.5 + 3 * rng.random()),
                delegation_accuracy=float(rng.random()),
            )
            q = int(rng.integers(1, 8))
            b_h = float(rng.random())
            a = Action.N if rng.random() < 0.5 else Action.H
            got = expected_reward(w, small_table, q, b_h, a)
            want = enumerate_expected_reward(small_table, w, q, b_h, a)
            assert got == pytest.approx(want, abs=1e-9)

    def test_empty_queue_rejected(self, small_table):
        with pytest.raises(ValueError):
            expected_reward(RewardWeights(), small_table, 0, 0.5, Action.N)


class TestBuildBeliefMdp:
    def test_smallest_instance_has_four_states(self, small_model, small_table):
        mdp = build_belief_mdp(
            small_model, small_table, QueueParams(max_length=1), RewardWeights(),
            (Action.N, Action.H), BeliefGrid(1.0),
        )
        assert mdp.num_states == 4
        sums = mdp.transition[mdp.feasible].sum(axis=1)
        assert np.abs(sums - 1).max() < 1e-8

    @pytest.mark.parametrize("actions", [(Action.N, Action.H), (Action.N, Action.H, Action.D)])
    def test_rows_sum_to_one(self, small_model, small_table, actions):
        mdp = build_belief_mdp(
            small_model, small_table, QueueParams(arrival_rate=0.2, max_length=10),
            RewardWeights(), actions,
        )
        sums = mdp.transition[mdp.feasible].sum(axis=1)
        assert np.abs(sums - 1).max() < 1e-8
        assert np.isfinite(mdp.reward[mdp.feasible]).all()

    def test_transition_is_product_of_kernels(self, small_model, small_table):
        params = QueueParams(arrival_rate=0.2, max_length=2)
        grid = BeliefGrid(0.5)
        mdp = build_belief_mdp(small_model, small_table, params, RewardWeights(),
                               (Action.N, Action.H), grid)
        for q in (1, 2):
            for ib, b in enumerate(grid.points):
                for ai, a in enumerate((Action.N, Action.H)):
                    qk = queue_transition(params, q, a)
                    bk = belief_transition(small_model, small_table, float(b), a, grid)
                    want = np.outer(qk, bk).reshape(-1)
                    got = mdp.transition[mdp.state_index(q, float(b)), ai]
                    assert np.abs(got - want).max() < 1e-12

    def test_wait_pseudo_action_at_empty_queue(self, small_model, small_table):
        params = QueueParams(arrival_rate=0.2, max_length=3)
        mdp = build_belief_mdp(small_model, small_table, params, RewardWeights(),
                               (Action.N, Action.H))
        s = mdp.state_index(0, 0.5)
        assert mdp.feasible[s].sum() == 1
        wait_idx = list(mdp.actions).index(WAIT)
        assert mdp.feasible[s, wait_idx]
        assert mdp.reward[s, wait_idx] == 0.0
        # belief unchanged under wait
        row = mdp.transition[s, wait_idx].reshape(params.max_length + 1, -1)
        assert row[:, mdp.grid.snap_index(0.5)].sum() == pytest.approx(1.0, abs=1e-9)


class TestValueIteration:
    def _mdp(self, small_model, small_table, actions=(Action.N, Action.H)):
        return build_belief_mdp(
            small_model, small_table, QueueParams(arrival_rate=0.2, max_length=4),
            RewardWeights(), actions, BeliefGrid(0.25),
        )

    def test_gamma_zero_matches_immediate_argmax(self, small_model, small_table):
        mdp = self._mdp(small_model, small_table)
        res = value_iteration(mdp, gamma=0.0, tol=1e-12)
        r = np.where(mdp.feasible, mdp.reward, -np.inf)
        assert np.array_equal(res.values, r.max(axis=1))

    def test_contraction_inequality_every_iteration(self, small_model, small_table):
        mdp = self._mdp(small_model, small_table, (Action.N, Action.H, Action.D))
        res = value_iteration(mdp, gamma=0.9, tol=1e-8)
        d = res.sup_deltas
        assert all(d[i + 1] <= 0.9 * d[i] + 1e-12 for i in range(len(d) - 1))
        assert res.converged

    def test_matches_policy_evaluation_linear_solve(self, small_model, small_table):
        mdp = self._mdp(small_model, small_table)
        res = value_iteration(mdp, gamma=0.9, tol=1e-10)
        want = policy_evaluation_solve(mdp, list(res.policy.actions), 0.9)
        assert np.abs(want - res.values).max() < 1e-6

    def test_six_state_hand_built_instance(self, small_model, small_table):
        mdp = build_belief_mdp(
            small_model, small_table, QueueParams(arrival_rate=0.3, max_length=1),
            RewardWeights(), (Action.N, Action.H), BeliefGrid(0.5),
        )
        assert mdp.num_states == 6
        res = value_iteration(mdp, gamma=0.95, tol=1e-10)
        want = policy_evaluation_solve(mdp, list(res.policy.actions), 0.95)
        assert np.abs(want - res.values).max() < 1e-8

    def test_invalid_gamma_rejected(self, small_model, small_table):
        mdp = self._mdp(small_model, small_table)
        with pytest.raises(ValueError):
            value_iteration(mdp, gamma=1.0)

    def test_tie_break_prefers_earlier_action(self, small_model, small_table):
        mdp = self._mdp(small_model, small_table)
        mdp.reward[:] = 0.0  # all actions tie everywhere
        res = value_iteration(mdp, gamma=0.5, tol=1e-10)
        for q in range(1, 5):
            for b in mdp.grid.points:
                assert res.policy.lookup(q, float(b)) == "N"


class TestPolicyExport:
    def test_round_trip(self, small_model, small_table, tmp_path):
        mdp = build_belief_mdp(
            small_model, small_table, QueueParams(arrival_rate=0.2, max_length=3),
            RewardWeights(), (Action.N, Action.H, Action.D), BeliefGrid(0.5),
        )
        policy = value_iteration(mdp, gamma=0.9, tol=1e-8).policy
        path = tmp_path / "policy.json"
        save_policy(policy, path)
        back = load_policy(path)
        assert back.grid_step == policy.grid_step
        assert back.max_length == policy.max_length
        assert back.action_set == policy.action_set
        assert back.gamma == policy.gamma
        assert list(back.actions) == list(policy.actions)
        assert np.abs(back.values - policy.values).max() < 1e-9

    def test_byte_identical_exports(self, small_model, small_table, tmp_path):
        mdp = build_belief_mdp(
            small_model, small_table, QueueParams(arrival_rate=0.2, max_length=3),
            RewardWeights(), (Action.N, Action.H), BeliefGrid(0.5),
        )
        policy = value_iteration(mdp, gamma=0.9, tol=1e-8).policy
        p1, p2 = tmp_path / "p1.json", tmp_path / "p2.json"
        save_policy(policy, p1)
        save_policy(policy, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_incomplete_entries_rejected(self, small_model, small_table):
        mdp = build_belief_mdp(
            small_model, small_table, QueueParams(arrival_rate=0.2, max_length=2),
            RewardWeights(), (Action.N, Action.H), BeliefGrid(0.5),
        )
        policy = value_iteration(mdp, gamma=0.9, tol=1e-8).policy
        doc = policy_to_dict(policy)
        doc["entries"] = doc["entries"][:-1]
        from fidsel.model_io import DataFormatError

        with pytest.raises(DataFormatError, match="cover"):
            policy_from_dict(doc)


class TestStructureReport:
    def test_constant_policy_thresholds_degenerate(self, policy2):
        import copy

        pol = copy.deepcopy(policy2)
        pol.actions = np.array(
            ["wait" if a == "wait" else "N" for a in pol.actions], dtype=object
        )
        rep = policy_structure_report(pol)
        for row in rep.rows:
            assert row.first_b["N"] == 0.0
            assert row.first_b["H"] is None
            assert row.h_is_upset
        assert rep.d_min_b is None and rep.d_min_q is None

    def test_demo_two_action_shape(self, policy2):
        rep = policy_structure_report(policy2)
        assert rep.h_upset_everywhere
        assert policy2.lookup(1, 1.0) == "H"
        assert policy2.lookup(policy2.max_length, 0.0) == "N"

    def test_demo_three_action_corner(self, policy3):
        rep = policy_structure_report(policy3)
        assert rep.d_min_b is not None and rep.d_min_b >= 0.9
        assert rep.d_min_q >= 5
        assert rep.interval_ordered_everywhere

    def test_render_text_mentions_delegation(self, policy3):
        text = policy_structure_report(policy3).render_text()
        assert "delegation region" in text
        assert "up-set" in text


class TestBeliefTracker:
    def test_starts_at_snapped_initial(self, scenario, demo_table):
        tracker = BeliefTracker(scenario.model, demo_table, scenario.grid)
        assert tracker.b_h == pytest.approx(0.3)  # snap of 0.338

    def test_delegation_keeps_belief(self, scenario, demo_table):
        tracker = BeliefTracker(scenario.model, demo_table, scenario.grid)
        b0 = tracker.b_h
        b1, fallback = tracker.update(Action.D, None)
        assert b1 == b0 and not fallback

    def test_update_stays_on_grid(self, scenario, demo_table):
        rng = np.random.default_rng(23)
        tracker = BeliefTracker(scenario.model, demo_table, scenario.grid)
        for _ in range(200):
            a = Action.N if rng.random() < 0.5 else Action.H
            o = ObservationTriple(rng.random(), 3 * rng.random(), 2500 * rng.random())
            b, _ = tracker.update(a, o)
            assert b in scenario.grid.points

    def test_out_of_support_evidence_clamps_into_lattice(self, scenario, demo_table):
        tracker = BeliefTracker(scenario.model, demo_table, scenario.grid)
        # absurdly slow reaction clamps to the top lattice bin: strong high evidence
        b, fallback = tracker.update(Action.N, ObservationTriple(0.5, 1.5, 99999.0))
        assert not fallback
        assert b >= 0.5
