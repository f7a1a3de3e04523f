"""Servo kinematics, quantization, gain pattern, and pointing error."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamtrack.geodesy import LosAngles
from beamtrack.pointing import (
    AntennaPattern,
    BACKLOBE_FLOOR_DBI,
    PointingState,
    ServoConfig,
    attitude_at,
    command_servo,
    gain_dbi,
    pointing_error_deg,
    quantize,
    settled,
    shortest_rotation,
)


class TestShortestRotation:
    def test_wrap_positive(self):
        assert shortest_rotation(350.0, 10.0) == pytest.approx(20.0)

    def test_wrap_negative(self):
        assert shortest_rotation(10.0, 350.0) == pytest.approx(-20.0)

    def test_tie_breaks_positive(self):
        assert shortest_rotation(0.0, 180.0) == pytest.approx(180.0)

    @given(cur=st.floats(0, 360), tgt=st.floats(0, 360))
    @settings(max_examples=200, deadline=None)
    def test_bounded_and_reaches_target(self, cur, tgt):
        d = shortest_rotation(cur, tgt)
        assert -180.0 < d <= 180.0
        diff = abs((cur + d) - tgt) % 360.0
        assert min(diff, 360.0 - diff) < 1e-9


class TestQuantize:
    def test_exactly_representable(self):
        assert quantize(33.3, 0.9) == pytest.approx(33.3)

    def test_rounds_to_nearest_step(self):
        assert quantize(33.7, 0.9) == pytest.approx(33.3)

    def test_midpoint_rounds_away_from_zero(self):
        assert quantize(0.45, 0.9) == pytest.approx(0.9)
        assert quantize(-0.45, 0.9) == pytest.approx(-0.9)

    @given(angle=st.floats(-720, 720))
    @settings(max_examples=200, deadline=None)
    def test_error_within_half_step(self, angle):
        q = quantize(angle, 0.9)
        assert abs(q - angle) <= 0.45 + 1e-9
        assert abs(q / 0.9 - round(q / 0.9)) < 1e-6


class TestCommandServo:
    cfg = ServoConfig()

    def test_zero_delta_is_instant_after_latency(self):
        state = PointingState(yaw_deg=33.3, pitch_deg=0.0)
        out = command_servo(state, LosAngles(33.3, 0.0), self.cfg, now_ns=0)
        assert out.motion.start_t_ns == 20_000_000
        assert out.motion.end_t_ns == out.motion.start_t_ns

    def test_yaw_wrap_takes_short_path(self):
        state = PointingState(yaw_deg=359.1, pitch_deg=0.0)
        out = command_servo(state, LosAngles(0.9, 0.0), self.cfg, now_ns=0)
        dur_s = (out.motion.end_t_ns - out.motion.start_t_ns) / 1e9
        assert dur_s == pytest.approx(1.8 / 360.0, abs=1e-6)

    def test_pitch_clamped_and_flagged(self):
        state = PointingState()
        out = command_servo(state, LosAngles(0.0, -60.0), self.cfg, now_ns=0)
        assert out.pitch_clamped
        assert out.target_pitch_deg == pytest.approx(-30.0, abs=0.9)

    def test_attitude_interpolation(self):
        state = PointingState(yaw_deg=0.0)
        out = command_servo(state, LosAngles(9.0, 0.0), self.cfg, now_ns=0)
        m = out.motion
        assert attitude_at(out, 0)[0] == pytest.approx(0.0)  # before start
        mid = (m.start_t_ns + m.end_t_ns) // 2
        assert attitude_at(out, mid)[0] == pytest.approx(4.5, abs=1e-6)
        assert attitude_at(out, m.end_t_ns + 1)[0] == pytest.approx(9.0)
        assert not settled(out, mid)
        assert settled(out, m.end_t_ns)


class TestPointingError:
    def test_identical_is_zero(self):
        assert pointing_error_deg((10.0, 5.0), LosAngles(10.0, 5.0)) == pytest.approx(0.0, abs=1e-6)

    def test_pure_yaw_at_zero_pitch(self):
        assert pointing_error_deg((0.0, 0.0), LosAngles(15.0, 0.0)) == pytest.approx(15.0, abs=1e-9)

    @given(
        y1=st.floats(0, 360), p1=st.floats(-80, 80),
        y2=st.floats(0, 360), p2=st.floats(-80, 80),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_unit_vector_oracle(self, y1, p1, y2, p2):
        def vec(yaw, pitch):
            cy, sy = math.cos(math.radians(yaw)), math.sin(math.radians(yaw))
            cp, sp = math.cos(math.radians(pitch)), math.sin(math.radians(pitch))
            return np.array([sy * cp, cy * cp, sp])  # ENU

        dot = float(np.clip(np.dot(vec(y1, p1), vec(y2, p2)), -1.0, 1.0))
        expected = math.degrees(math.acos(dot))
        got = pointing_error_deg((y1, p1), LosAngles(y2, p2))
        assert got == pytest.approx(expected, abs=1e-6)


class TestGainPattern:
    pattern = AntennaPattern()

    def test_boresight_gain(self):
        assert gain_dbi(self.pattern, 0.0) == pytest.approx(22.0)

    def test_half_power_at_half_beamwidth(self):
        assert gain_dbi(self.pattern, 7.5) == pytest.approx(19.0)

    def test_full_beamwidth_off(self):
        assert gain_dbi(self.pattern, 15.0) == pytest.approx(10.0)

    def test_backlobe_floor(self):
        assert gain_dbi(self.pattern, 120.0) == BACKLOBE_FLOOR_DBI

    @given(theta=st.floats(0, 180))
    @settings(max_examples=100, deadline=None)
    def test_monotone_nonincreasing(self, theta):
        assert gain_dbi(self.pattern, theta) <= 22.0
        assert gain_dbi(self.pattern, theta) >= BACKLOBE_FLOOR_DBI
