"""Trot scheduling and E-matrix encoding."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from locoman import gait
from locoman.gait import GaitSchedule


def test_phase_origin():
    flags = gait.contact_flags(GaitSchedule(), 0.0)
    np.testing.assert_array_equal(flags, [True, False, False, True])  # {FL,RR}


def test_half_period_swap():
    flags = gait.contact_flags(GaitSchedule(), 0.1)
    np.testing.assert_array_equal(flags, [False, True, True, False])


def test_periodicity(rng):
    s = GaitSchedule()
    for _ in range(100):
        t = float(rng.uniform(0, 10))
        np.testing.assert_array_equal(
            gait.contact_flags(s, t), gait.contact_flags(s, t + 0.2)
        )


def test_trot_never_zero_stance(rng):
    s = GaitSchedule()
    for t in np.linspace(0, 0.4, 4001):
        assert gait.contact_flags(s, float(t)).sum() >= 2


def test_standing_mode_all_stance():
    s = GaitSchedule(standing=True)
    np.testing.assert_array_equal(gait.contact_flags(s, 0.123), [True] * 4)


def test_selection_matrix_all_stance():
    e = gait.selection_matrix([True] * 4)
    assert e.shape == (0, 12)


def test_selection_matrix_flight():
    e = gait.selection_matrix([False] * 4)
    assert e.shape == (12, 12)
    np.testing.assert_array_equal(e, np.eye(12))


def test_selection_matrix_trot_indices():
    e = gait.selection_matrix([True, False, False, True])
    assert e.shape == (6, 12)
    expected_cols = [3, 4, 5, 6, 7, 8]  # FR and RL components
    for i, col in enumerate(expected_cols):
        assert e[i, col] == 1.0
        assert e[i].sum() == 1.0


@settings(max_examples=100)
@given(st.lists(st.booleans(), min_size=4, max_size=4),
       st.lists(st.floats(-50, 50), min_size=12, max_size=12))
def test_selection_exactness(flags, u):
    """E u = 0 iff all swing components of u are zero."""
    u = np.array(u)
    e = gait.selection_matrix(flags)
    swing_components = np.concatenate(
        [u[3 * f : 3 * f + 3] for f in range(4) if not flags[f]]
    ) if not all(flags) else np.zeros(0)
    zero = e @ u if e.size else np.zeros(0)
    assert np.all(zero == 0) == bool(np.all(swing_components == 0))


def test_sequence_shift_consistency():
    s = GaitSchedule()
    ts = 1.0 / 60.0
    t = 0.0371
    a = gait.predicted_contact_sequence(s, t, 8, ts)
    b = gait.predicted_contact_sequence(s, t + ts, 8, ts)
    np.testing.assert_array_equal(a[1:], b[:-1])


def test_sequence_static_stand():
    s = GaitSchedule(standing=True)
    seq = gait.predicted_contact_sequence(s, 0.0, 8, 1.0 / 60.0)
    assert seq.all()


def test_stance_time_counting():
    """Each foot accumulates 50% stance time over a cycle (+-1 sample)."""
    s = GaitSchedule()
    n = 2000
    grid = np.arange(n) * (s.step_time / n)
    counts = np.zeros(4)
    for t in grid:
        counts += gait.contact_flags(s, float(t))
    for foot in range(4):
        assert abs(counts[foot] - n / 2) <= 1


def test_contact_flags_pure_function():
    s = GaitSchedule()
    a = gait.contact_flags(s, 0.123456)
    b = gait.contact_flags(s, 0.123456)
    np.testing.assert_array_equal(a, b)
