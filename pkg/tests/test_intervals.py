import numpy as np
import pytest

from mdpabs.core import AbstractionConfig, SemanticDim, SemanticMapping
from mdpabs.ingest import annotate_returns
from mdpabs.intervals import (
    CellSpace, Interval, assign_dimension, build_cells, build_frame,
    compute_errors, merge_small_cells, partition_dimension, reduction_level,
    refine,
)

from conftest import make_dataset

SEMANTICS = SemanticMapping((SemanticDim("v_ego", "v_ego", "m/s"),
                             SemanticDim("gap", "gap", "m")))


def frame_of(ds, gamma=0.9):
    return build_frame(annotate_returns(ds, gamma), SEMANTICS)


class TestPartitionDimension:
    def test_uniform_grid_cover(self):
        # greedy by hand on values 0.00, 0.01, ..., 0.99:
        # [0, .25] takes 0..0.25 (boundary joins the lower interval),
        # then [.26, .51], [.52, .77], and the tail [.78, .99]
        values = np.round(np.arange(0.0, 1.0, 0.01), 2)
        parts = partition_dimension(values, 0.01, 0.25, 1)
        assert len(parts) == 4
        assert [round(p.length, 10) for p in parts[:3]] == [0.25, 0.25, 0.25]
        assert sum(p.count for p in parts) == 100

    def test_single_value(self):
        parts = partition_dimension(np.array([0.4]), 0.05, 0.2, 1)
        assert len(parts) == 1
        assert (parts[0].lo, parts[0].hi) == (0.4, 0.45)

    def test_bimodal_leaves_gap(self):
        # 20-point fixture: 10 values near 0.1, 10 near 0.9; greedy must not
        # bridge the unoccupied middle
        lo_cluster = 0.1 + 0.005 * np.arange(10)
        hi_cluster = 0.9 + 0.005 * np.arange(10)
        values = np.concatenate([lo_cluster, hi_cluster])
        parts = partition_dimension(values, 0.01, 0.25, 1)
        assert len(parts) == 2
        assert parts[0].hi < 0.3
        assert parts[1].lo == pytest.approx(0.9)

    def test_underfull_flagging(self):
        values = np.array([0.1, 0.11, 0.12, 0.8])
        parts = partition_dimension(values, 0.01, 0.1, n_min_count=2)
        assert not parts[0].underfull
        assert parts[1].underfull

    def test_tail_clipped_to_unit_range(self):
        parts = partition_dimension(np.array([0.2, 0.999]), 0.05, 0.1, 1)
        assert parts[-1].hi == 1.0

    def test_intervals_disjoint_and_cover(self):
        rng = np.random.default_rng(5)
        values = rng.random(500)
        parts = partition_dimension(values, 0.02, 0.11, 1)
        for a, b in zip(parts, parts[1:]):
            assert a.hi <= b.lo + 1e-12
        idx = assign_dimension(parts, values)
        for i, v in zip(idx, values):
            assert parts[i].lo <= v <= parts[i].hi


class TestBuildCells:
    def test_dimension_count_bound(self):
        theta = np.array([[0.1], [0.2], [0.9]])
        parts = [partition_dimension(theta[:, 0], 0.01, 0.3, 1)]
        cs = build_cells(theta, parts)
        assert cs.n_cells <= 2

    def test_dense_cartesian_count(self):
        # 3 x 4 interval grid with every combination occupied
        xs = np.array([0.1, 0.5, 0.9])
        ys = np.array([0.125, 0.375, 0.625, 0.875])
        theta = np.array([[x, y] for x in xs for y in ys])
        parts = [
            [Interval(0.0, 1 / 3, 1), Interval(1 / 3, 2 / 3, 1), Interval(2 / 3, 1.0, 1)],
            [Interval(0.0, 0.25, 1), Interval(0.25, 0.5, 1),
             Interval(0.5, 0.75, 1), Interval(0.75, 1.0, 1)],
        ]
        cs = build_cells(theta, parts)
        assert cs.n_cells == 12

    def test_boundary_ties_to_lower_cell(self):
        theta = np.array([[0.5], [0.49], [0.51]])
        parts = [[Interval(0.0, 0.5, 2), Interval(0.5, 1.0, 1)]]
        cs = build_cells(theta, parts)
        assert cs.assignment[0] == cs.assignment[1]
        assert cs.assignment[2] != cs.assignment[0]

    def test_assignment_is_total(self):
        rng = np.random.default_rng(0)
        theta = rng.random((200, 2))
        parts = [partition_dimension(theta[:, j], 0.02, 0.2, 1) for j in range(2)]
        cs = build_cells(theta, parts)
        assert cs.assignment.shape == (200,)
        assert sum(c.count for c in cs.cells) == 200


class TestMergeSmallCells:
    def test_merges_into_face_adjacent_neighbor(self):
        theta = np.array([[0.1], [0.12], [0.14], [0.3]])
        parts = [[Interval(0.1, 0.2, 3), Interval(0.25, 0.35, 1)]]
        cs = build_cells(theta, parts)
        merged = merge_small_cells(cs, n_min_count=2)
        assert merged.n_cells == 1
        assert merged.cells[0].count == 4
        assert merged.cells[0].highs[0] == 0.35
        assert np.all(merged.assignment == 0)

    def test_isolated_cell_flagged(self):
        theta = np.array([[0.1, 0.1], [0.12, 0.12], [0.9, 0.9]])
        parts = [
            [Interval(0.0, 0.2, 2), Interval(0.85, 1.0, 1)],
            [Interval(0.0, 0.2, 2), Interval(0.85, 1.0, 1)],
        ]
        cs = build_cells(theta, parts)
        merged = merge_small_cells(cs, n_min_count=2)
        # diagonal neighbor is not face-adjacent, so the lone cell persists
        assert merged.n_cells == 2
        flags = {c.index: c.flags for c in merged.cells}
        assert flags[(1, 1)] == ("underfull",)


class TestComputeErrors:
    def test_singletons_zero(self):
        theta = np.array([[0.1], [0.5], [0.9]])
        parts = [[Interval(0.05, 0.15, 1), Interval(0.45, 0.55, 1), Interval(0.85, 0.95, 1)]]
        cs = build_cells(theta, parts)
        assert compute_errors(cs, theta) == (0.0, 0.0)

    def test_two_point_cell(self):
        theta = np.array([[0.1], [0.3]])
        parts = [[Interval(0.1, 0.3, 2)]]
        cs = build_cells(theta, parts)
        e_mean, e_max = compute_errors(cs, theta)
        assert e_mean == pytest.approx(0.1)
        assert e_max == pytest.approx(0.1)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        theta = rng.random((300, 2))
        parts = [partition_dimension(theta[:, j], 0.02, 0.15, 1) for j in range(2)]
        cs = build_cells(theta, parts)
        e_mean, e_max = compute_errors(cs, theta)
        devs = []
        for cell in cs.cells:
            pts = theta[cell.member_ids]
            mean = pts.mean(axis=0)
            devs.append(np.abs(pts - mean))
        flat = np.concatenate([d.reshape(-1) for d in devs])
        assert abs(e_mean - flat.mean()) <= 1e-12
        assert abs(e_max - flat.max()) <= 1e-12


class TestReductionLevel:
    def test_published_ratio(self):
        cs = CellSpace(cells=(None,) * 1200, partitions=(), assignment=np.zeros(11858, dtype=int))
        assert reduction_level(cs) == pytest.approx(0.1012, abs=5e-5)

    def test_singletons(self):
        cs = CellSpace(cells=(None,) * 10, partitions=(), assignment=np.arange(10))
        assert reduction_level(cs) == 1.0

    def test_single_cell(self):
        cs = CellSpace(cells=(None,), partitions=(), assignment=np.zeros(50, dtype=int))
        assert reduction_level(cs) == 1 / 50


class TestRefine:
    def test_loose_thresholds_converge_immediately(self):
        ds = make_dataset(n_episodes=4, steps=40)
        frame = frame_of(ds)
        cfg = AbstractionConfig(d_min=(0.001, 0.001), d_max=(0.2, 0.2),
                                n_min=0.002, e_mean=0.5, e_max=1.0,
                                reduction_band=(0.001, 0.9))
        cs = refine(frame, cfg)
        assert cs.converged
        assert len(cs.iteration_log) == 1

    def test_tight_e_max_shrinks_monotonically(self):
        ds = make_dataset(n_episodes=6, steps=60,
                          feature_fn=lambda e, t: {"v_ego": 10.0 + t * 0.37 + e,
                                                   "gap": 40.0 - 0.53 * t + 2 * e})
        frame = frame_of(ds)
        cfg = AbstractionConfig(d_min=(0.0005, 0.0005), d_max=(0.3, 0.3),
                                n_min=0.002, e_mean=0.01, e_max=0.02,
                                reduction_band=(0.0001, 0.999), max_iters=30)
        cs = refine(frame, cfg)
        d_maxes = [entry["d_max"][0] for entry in cs.iteration_log]
        assert all(b <= a for a, b in zip(d_maxes, d_maxes[1:]))
        if cs.converged:
            final = cs.iteration_log[-1]
            assert final["e_mean"] <= cfg.e_mean
            assert final["e_max"] <= cfg.e_max

    def test_not_converged_flag(self):
        ds = make_dataset(n_episodes=3, steps=30)
        frame = frame_of(ds)
        # impossible: demand tiny errors but forbid small cells
        cfg = AbstractionConfig(d_min=(0.3, 0.3), d_max=(0.3, 0.3),
                                n_min=0.01, e_mean=1e-9, e_max=1e-9,
                                reduction_band=(0.5, 0.6), max_iters=5)
        cs = refine(frame, cfg)
        assert not cs.converged
        assert cs.unmet

    def test_deterministic(self):
        ds = make_dataset(n_episodes=5, steps=50)
        frame = frame_of(ds)
        cfg = AbstractionConfig(d_min=(0.001, 0.001), d_max=(0.1, 0.1),
                                n_min=0.002, e_mean=0.02, e_max=0.05,
                                reduction_band=(0.01, 0.9))
        a = refine(frame, cfg)
        b = refine(frame, cfg)
        assert a.n_cells == b.n_cells
        assert np.array_equal(a.assignment, b.assignment)
        assert all(x.flags == y.flags for x, y in zip(a.cells, b.cells))
