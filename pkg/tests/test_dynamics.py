import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curator.dynamics import (ACCEL_MAX, ACCEL_MIN, YAW_RATE_MAX, Action, KinState, forward_step,
                              inverse_action, inverse_actions, kinematic_chain, simulate)
from curator.errors import BoundsError, InsufficientHistory


def test_straight_line():
    s = forward_step(KinState(0, 0, 0, 10), Action(0, 0), 0.1)
    assert (s.x, s.y, s.yaw, s.v) == pytest.approx((1.0, 0.0, 0.0, 10.0))


def test_position_uses_pre_update_speed():
    s = forward_step(KinState(0, 0, 0, 0), Action(8, 0), 0.1)
    assert s.x == 0 and s.y == 0 and s.v == pytest.approx(0.8)


def test_yaw_wraps():
    s = forward_step(KinState(0, 0, 3.10, 1), Action(0, 1.0), 0.1)
    assert s.yaw == pytest.approx(3.20 - 2 * np.pi, abs=1e-12)


def test_speed_floor():
    assert forward_step(KinState(0, 0, 0, 0.5), Action(-10, 0)).v == 0.0


def test_out_of_bounds_action_rejected():
    with pytest.raises(BoundsError):
        forward_step(KinState(0, 0, 0, 1), Action(9, 0))
    with pytest.raises(BoundsError):
        forward_step(KinState(0, 0, 0, 1), Action(0, -1.5))


def test_inverse_simple_cases():
    s = KinState(0, 0, 0, 10)
    assert inverse_action(s, KinState(1, 0, 0, 10)) == Action(0, 0)
    assert inverse_action(KinState(0, 0, 0, 5), KinState(0, 0, 0.05, 5)).yaw_rate == pytest.approx(0.5)


def test_inverse_flags_clipping():
    a = inverse_action(KinState(0, 0, 0, 10), KinState(1, 0, 0, 8))
    assert a.accel == ACCEL_MIN and a.clipped


@settings(max_examples=300, deadline=None)
@given(x=st.floats(-1e3, 1e3), y=st.floats(-1e3, 1e3), yaw=st.floats(-np.pi, np.pi),
       v=st.floats(1.0, 40.0), accel=st.floats(ACCEL_MIN, ACCEL_MAX),
       yr=st.floats(-YAW_RATE_MAX, YAW_RATE_MAX))
def test_inverse_recovers_action(x, y, yaw, v, accel, yr):
    s = KinState(x, y, yaw, v)
    a = inverse_action(s, forward_step(s, Action(accel, yr)))
    assert abs(a.accel - accel) <= 1e-12
    assert abs(a.yaw_rate - yr) <= 1e-12
    assert not a.clipped


def test_vectorized_inverse_matches_scalar():
    rng = np.random.default_rng(0)
    acts = np.stack([rng.uniform(-3, 3, 50), rng.uniform(-0.3, 0.3, 50)], 1)
    states = simulate(KinState(0, 0, 3.0, 12.0), acts)
    got, clipped = inverse_actions(states[:, 2], states[:, 3])
    np.testing.assert_allclose(got, acts, atol=1e-10)
    assert not clipped.any()


def test_chain_hand_values():
    c = kinematic_chain([10, 10, 8], [0, 0, 0], 0.1)
    assert np.isnan(c.accel[0]) and c.accel[1] == 0 and c.accel[2] == pytest.approx(-20)
    assert np.isnan(c.jerk[:2]).all() and c.jerk[2] == pytest.approx(-200)


def test_chain_unwraps_yaw():
    c = kinematic_chain([5, 5, 5], [3.1, -3.1, -3.1], 0.1)
    assert c.yaw_rate[1] == pytest.approx((2 * np.pi - 6.2) / 0.1)
    assert c.yaw_rate[1] == pytest.approx(0.832, abs=1e-3)


def test_chain_constant_track():
    c = kinematic_chain(np.full(10, 7.0), np.full(10, 0.4))
    d = c.defined
    assert d.sum() == 8
    assert (c.jerk[d] == 0).all() and (c.yaw_accel[d] == 0).all()


def test_chain_gaps_in_validity():
    c = kinematic_chain([1, 2, 3, 4, 5], np.zeros(5), valid=[1, 1, 0, 1, 1])
    assert list(np.flatnonzero(~np.isnan(c.accel))) == [1, 4]
    assert not c.defined.any()


def test_chain_needs_history():
    with pytest.raises(InsufficientHistory):
        kinematic_chain([1, 2], [0, 0])
