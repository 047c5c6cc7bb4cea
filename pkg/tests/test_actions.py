import itertools

import pytest
from hypothesis import given, strategies as st

from mdpabs.actions import ActionAbstraction, abstract_action, representative_action

ACCEL = ActionAbstraction(("accel",), (-8.0,), (3.0,), (0.5,))


class TestAbstractAction:
    def test_counts(self):
        assert ACCEL.counts == (22,)

    def test_lower_bound(self):
        assert abstract_action(ACCEL, (-8.0,)) == (0,)

    def test_interior(self):
        # floor((0 - (-8)) / 0.5) = 16
        assert abstract_action(ACCEL, (0.0,)) == (16,)

    def test_upper_clamp(self):
        assert abstract_action(ACCEL, (3.0,)) == (21,)

    def test_out_of_range_clamps(self):
        assert abstract_action(ACCEL, (-100.0,)) == (0,)
        assert abstract_action(ACCEL, (99.0,)) == (21,)

    @given(st.floats(min_value=-8.0, max_value=3.0),
           st.floats(min_value=-8.0, max_value=3.0))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert abstract_action(ACCEL, (lo,))[0] <= abstract_action(ACCEL, (hi,))[0]


class TestRepresentativeAction:
    def test_midpoint(self):
        # l + (k + 0.5) g with k = 0
        assert representative_action(ACCEL, (0,)) == (-7.75,)

    def test_last_interval_clamped_to_upper(self):
        # -8 + 21.5 * 0.5 = 2.75 < 3, so no clamp on this grid
        assert representative_action(ACCEL, (21,)) == (2.75,)
        ragged = ActionAbstraction(("a",), (0.0,), (1.0,), (0.3,))
        assert ragged.counts == (4,)
        # midpoint 0.3 * 3.5 = 1.05 exceeds the range, clamps to 1.0
        assert representative_action(ragged, (3,)) == (1.0,)

    def test_index_out_of_range(self):
        with pytest.raises(ValueError):
            representative_action(ACCEL, (22,))

    @pytest.mark.parametrize("abs_", [
        ACCEL,
        ActionAbstraction(("a",), (0.0,), (1.0,), (0.3,)),
        ActionAbstraction(("x", "y"), (-1.0, 0.0), (1.0, 2.5), (0.25, 1.0)),
    ])
    def test_round_trip_all_indices(self, abs_):
        for idx in itertools.product(*(range(k) for k in abs_.counts)):
            assert abstract_action(abs_, representative_action(abs_, idx)) == idx


class TestFlatIndex:
    def test_bijection(self):
        grid = ActionAbstraction(("x", "y"), (0.0, 0.0), (1.0, 1.0), (0.5, 0.25))
        seen = set()
        for idx in itertools.product(*(range(k) for k in grid.counts)):
            flat = grid.flat_index(idx)
            assert grid.unflatten(flat) == idx
            seen.add(flat)
        assert seen == set(range(grid.n_abstract))
