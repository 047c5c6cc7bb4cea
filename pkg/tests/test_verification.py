import os
import re

import numpy as np
import pytest

from mdpabs.ingest import dataset_from_rows
from mdpabs.mdp import mdp_from_tables
from mdpabs.verification import (GapReport, PropertySpec,
                                 check_bounded_reach_max,
                                 check_bounded_reward_min, check_property,
                                 empirical_property, export_prism,
                                 export_properties, parse_prism, run_prism,
                                 semantic_gap)

from oracles import (enumerate_min_reward, enumerate_reach_max,
                     feasible_horizon, random_mdp)


def chain_mdp():
    # 0 -> 1 with reward 1, then absorb in 1
    return mdp_from_tables(
        {(0, 0): {1: 1.0}, (1, 0): {1: 1.0}},
        {(0, 0): 1.0, (1, 0): 0.0},
        np.array([1.0, 0.0]),
        labels={"goal": np.array([False, True])})


class TestPropertySpec:
    def test_lines(self):
        assert PropertySpec("RminC", 51).prism_line() == 'R{"step"}min=? [ C<=51 ]'
        assert (PropertySpec("PmaxF", 60, "isCrashed").prism_line()
                == 'Pmax=? [ F<=60 "isCrashed" ]')

    def test_validation(self):
        with pytest.raises(ValueError, match="kind"):
            PropertySpec("Rmax", 5)
        with pytest.raises(ValueError, match="horizon"):
            PropertySpec("RminC", 0)
        with pytest.raises(ValueError, match="label"):
            PropertySpec("PmaxF", 5)


GOLDEN_CHAIN = """mdp

module abstraction
  s : [0..1] init 0;
  [a0] s=0 -> 1.000000000:(s'=1);
  [a0] s=1 -> 1.000000000:(s'=1);
endmodule

rewards "step"
  [a0] s=0 : 1.000000000;
  [a0] s=1 : 0.000000000;
endrewards

label "goal" = s=1;
"""


class TestExport:
    def test_golden_chain(self):
        assert export_prism(chain_mdp()) == GOLDEN_CHAIN

    def test_thirds_row_prints_sum_one(self):
        mdp = mdp_from_tables(
            {(0, 0): {0: 1 / 3, 1: 1 / 3, 2: 1 / 3},
             (1, 0): {1: 1.0}, (2, 0): {2: 1.0}},
            {(0, 0): 0.0, (1, 0): 0.0, (2, 0): 0.0},
            np.array([1.0, 0.0, 0.0]))
        text = export_prism(mdp)
        line = next(l for l in text.splitlines() if l.strip().startswith("[a0] s=0"))
        assert ("0.333333333:(s'=0) + 0.333333333:(s'=1) + 0.333333334:(s'=2)"
                in line)
        units = [int(h + t) for h, t in
                 re.findall(r"(\d+)\.(\d{9}):", line)]
        assert sum(units) == 10 ** 9

    def test_every_row_prints_sum_one(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            text = export_prism(random_mdp(rng))
            for line in text.splitlines():
                if "->" not in line:
                    continue
                units = [int(h + t) for h, t in
                         re.findall(r"(\d+)\.(\d{9}):", line)]
                assert sum(units) == 10 ** 9

    def test_byte_deterministic(self):
        rng = np.random.default_rng(4)
        mdp = random_mdp(rng)
        assert export_prism(mdp) == export_prism(mdp)

    def test_properties_file(self):
        specs = [PropertySpec("RminC", 51), PropertySpec("PmaxF", 60, "isCrashed")]
        text = export_properties(specs)
        assert text == ('R{"step"}min=? [ C<=51 ]\n'
                        'Pmax=? [ F<=60 "isCrashed" ]\n')
        assert export_properties([]) == ""

    def test_unknown_label_rejected(self):
        specs = [PropertySpec("PmaxF", 5, "nope")]
        with pytest.raises(ValueError, match="unknown label"):
            export_properties(specs, labels=("goal",))

    def test_multi_init_block(self):
        mdp = mdp_from_tables(
            {(0, 0): {1: 1.0}, (1, 0): {1: 1.0}},
            {(0, 0): 0.0, (1, 0): 0.0},
            np.array([0.25, 0.75]))
        text = export_prism(mdp)
        assert "s : [0..1];" in text
        assert "init\n  s=0 | s=1\nendinit" in text


class TestReader:
    def test_round_trip_single_init(self):
        rng = np.random.default_rng(9)
        for _ in range(15):
            mdp = random_mdp(rng)
            init = np.zeros(mdp.n_states)
            init[int(rng.integers(mdp.n_states))] = 1.0
            mdp = mdp_from_tables(
                {(int(mdp.pair_state[p]), int(mdp.pair_action[p])):
                 mdp.row(int(mdp.pair_state[p]), int(mdp.pair_action[p]))
                 for p in range(mdp.n_pairs)},
                {(int(mdp.pair_state[p]), int(mdp.pair_action[p])):
                 float(mdp.pair_reward[p]) for p in range(mdp.n_pairs)},
                init, action_space=mdp.action_space, labels=mdp.labels)
            back = parse_prism(export_prism(mdp))
            assert back.n_states == mdp.n_states
            assert np.array_equal(back.pair_state, mdp.pair_state)
            assert np.array_equal(back.pair_action, mdp.pair_action)
            # residual branch absorbs the other branches' rounding, so the
            # per-row error bound is n_branches half-units of 1e-9
            assert back.probs == pytest.approx(mdp.probs, abs=2e-9)
            assert back.pair_reward == pytest.approx(mdp.pair_reward, abs=5e-10)
            assert np.array_equal(back.init, mdp.init)
            for name, mask in mdp.labels.items():
                assert np.array_equal(back.labels[name], mask)

    def test_multi_init_support_preserved(self):
        mdp = mdp_from_tables(
            {(0, 0): {1: 1.0}, (1, 0): {1: 1.0}, (2, 0): {2: 1.0}},
            {(0, 0): 0.0, (1, 0): 0.0, (2, 0): 0.0},
            np.array([0.25, 0.0, 0.75]))
        back = parse_prism(export_prism(mdp))
        assert back.init == pytest.approx([0.5, 0.0, 0.5])

    def test_rejects_garbage(self):
        with pytest.raises(ValueError, match="unrecognized"):
            parse_prism("mdp\nmodule abstraction\nwat;\nendmodule\n")


class TestChecker:
    def test_deterministic_chain(self):
        mdp = mdp_from_tables({(0, 0): {0: 1.0}}, {(0, 0): 1.0}, np.array([1.0]))
        assert check_bounded_reward_min(mdp, 3) == pytest.approx(3.0)

    def test_min_selects_cheaper_action(self):
        mdp = mdp_from_tables(
            {(0, 0): {0: 1.0}, (0, 1): {0: 1.0}},
            {(0, 0): 1.0, (0, 1): 0.5},
            np.array([1.0]))
        assert check_bounded_reward_min(mdp, 1) == pytest.approx(0.5)

    def test_reach_initial_goal(self):
        mdp = chain_mdp()
        flipped = mdp_from_tables(
            {(0, 0): {1: 1.0}, (1, 0): {1: 1.0}},
            {(0, 0): 0.0, (1, 0): 0.0},
            np.array([1.0, 0.0]),
            labels={"goal": np.array([True, False])})
        assert check_bounded_reach_max(flipped, "goal", 3) == pytest.approx(1.0)

    def test_geometric_reach(self):
        # 0.5 per step to an absorbing goal: within 2 steps 1 - 0.25
        mdp = mdp_from_tables(
            {(0, 0): {0: 0.5, 1: 0.5}, (1, 0): {1: 1.0}},
            {(0, 0): 0.0, (1, 0): 0.0},
            np.array([1.0, 0.0]),
            labels={"goal": np.array([False, True])})
        assert check_bounded_reach_max(mdp, "goal", 2) == pytest.approx(0.75)

    def test_unreachable_label(self):
        mdp = mdp_from_tables(
            {(0, 0): {0: 1.0}, (1, 0): {1: 1.0}},
            {(0, 0): 0.0, (1, 0): 0.0},
            np.array([1.0, 0.0]),
            labels={"far": np.array([False, True])})
        assert check_bounded_reach_max(mdp, "far", 10) == 0.0

    def test_unknown_label(self):
        with pytest.raises(KeyError):
            check_bounded_reach_max(chain_mdp(), "nope", 3)

    def test_reach_monotone_in_horizon(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            mdp = random_mdp(rng)
            vals = [check_bounded_reach_max(mdp, "goal", n) for n in range(1, 8)]
            assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
            assert all(0.0 <= v <= 1.0 + 1e-12 for v in vals)

    def test_reward_monotone_for_nonnegative_rewards(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            mdp = random_mdp(rng)
            shifted = mdp_from_tables(
                {(int(s), int(a)): mdp.row(int(s), int(a))
                 for s, a in zip(mdp.pair_state, mdp.pair_action)},
                {(int(s), int(a)): abs(mdp.reward(int(s), int(a)))
                 for s, a in zip(mdp.pair_state, mdp.pair_action)},
                mdp.init, action_space=mdp.action_space)
            vals = [check_bounded_reward_min(shifted, n) for n in range(1, 8)]
            assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


class TestExhaustiveOracle:
    def test_reward_min_matches_enumeration(self):
        rng = np.random.default_rng(42)
        for _ in range(40):
            mdp = random_mdp(rng)
            horizon = feasible_horizon(mdp, rng)
            assert check_bounded_reward_min(mdp, horizon) == pytest.approx(
                enumerate_min_reward(mdp, horizon), abs=1e-9)

    def test_reach_max_matches_enumeration(self):
        rng = np.random.default_rng(43)
        for _ in range(40):
            mdp = random_mdp(rng)
            horizon = feasible_horizon(mdp, rng)
            assert check_bounded_reach_max(mdp, "goal", horizon) == pytest.approx(
                enumerate_reach_max(mdp, "goal", horizon), abs=1e-9)


def episode_dataset(lengths, reward=1.0, label_rows=()):
    rows, line = [], 1
    for e, length in enumerate(lengths):
        for t in range(length):
            rows.append({"episode": e, "t": t, "features": {"x": 0.5},
                         "action": [0.0], "reward": reward,
                         "terminal": t == length - 1,
                         "labels": {"hit": (e, t) in label_rows}, "line": line})
            line += 1
    return dataset_from_rows(rows, ("x",), ("hit",))


class TestEmpirical:
    def test_constant_reward_truncation(self):
        ds = episode_dataset([60, 30])
        val = empirical_property(ds, PropertySpec("RminC", 51))
        assert val == pytest.approx((51 + 30) / 2)

    def test_label_never_occurs(self):
        ds = episode_dataset([10, 10])
        assert empirical_property(ds, PropertySpec("PmaxF", 5, "hit")) == 0.0

    def test_fraction_of_episodes(self):
        ds = episode_dataset([10] * 5, label_rows={(0, 3), (2, 9), (3, 2)})
        assert empirical_property(ds, PropertySpec("PmaxF", 9, "hit")) == pytest.approx(0.6)

    def test_window_is_inclusive(self):
        ds = episode_dataset([10, 10], label_rows={(0, 5)})
        assert empirical_property(ds, PropertySpec("PmaxF", 5, "hit")) == pytest.approx(0.5)
        assert empirical_property(ds, PropertySpec("PmaxF", 4, "hit")) == 0.0


class TestSemanticGap:
    def test_signed_errors(self):
        mdp = chain_mdp()
        ds = episode_dataset([5, 5], reward=1.0, label_rows={(0, 1)})
        labeled = mdp_from_tables(
            {(0, 0): {1: 1.0}, (1, 0): {1: 1.0}},
            {(0, 0): 1.0, (1, 0): 0.0},
            np.array([1.0, 0.0]),
            labels={"hit": np.array([False, True])})
        report = semantic_gap(labeled, ds,
                              [PropertySpec("RminC", 3),
                               PropertySpec("PmaxF", 3, "hit")])
        assert len(report.rows) == 2
        r0 = report.rows[0]
        # verified: one reward step then absorb = 1.0; empirical 3 per episode
        assert r0.verified == pytest.approx(1.0)
        assert r0.empirical == pytest.approx(3.0)
        assert r0.error == pytest.approx(2.0)
        r1 = report.rows[1]
        assert r1.verified == pytest.approx(1.0)
        assert r1.empirical == pytest.approx(0.5)
        assert r1.error == pytest.approx(-0.5)

    def test_empty_specs(self):
        report = semantic_gap(chain_mdp(), episode_dataset([3]), [])
        assert report == GapReport(rows=())
        assert report.to_jsonable() == {"rows": []}


@pytest.mark.skipif(not os.environ.get("PRISM_BIN"),
                    reason="PRISM_BIN not configured")
class TestPrismCrossCheck:
    def test_chain_against_binary(self, tmp_path):
        mdp = chain_mdp()
        model = tmp_path / "chain.prism"
        props = tmp_path / "chain.props"
        export_prism(mdp, model)
        export_properties([PropertySpec("RminC", 3),
                           PropertySpec("PmaxF", 3, "goal")], props)
        values = run_prism(model, props)
        assert values[0] == pytest.approx(check_property(mdp, PropertySpec("RminC", 3)), abs=1e-6)
        assert values[1] == pytest.approx(
            check_property(mdp, PropertySpec("PmaxF", 3, "goal")), abs=1e-6)
