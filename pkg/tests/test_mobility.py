"""Route replay and sensor synthesis: GNSS error model and IMU noise."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from beamtrack.geodesy import EnuVector, GeoFix, distance_3d, enu_offset_fix
from beamtrack.mobility import (
    GnssSensor,
    ImuSensor,
    Route,
    RouteError,
    SensorConfig,
    TruePose,
    Waypoint,
    load_route,
    sample_route,
)

ORIGIN = GeoFix(40.766, -111.846, 1400.0)


def _wp(t_s, de, dn, du=0.0):
    fix = enu_offset_fix(ORIGIN, EnuVector(de, dn, du))
    return {"t_s": t_s, "lat_deg": fix.lat_deg, "lon_deg": fix.lon_deg, "alt_m": fix.alt_m}


class TestRoute:
    def test_two_waypoint_line(self):
        route = load_route({"waypoints": [_wp(0.0, 0.0, 0.0), _wp(10.0, 0.0, 100.0)]})
        assert len(route.waypoints) == 2
        assert route.path_length_m() == pytest.approx(100.0, abs=0.01)

    def test_out_of_order_names_index(self):
        doc = {"waypoints": [_wp(0.0, 0, 0), _wp(5.0, 10, 0), _wp(4.0, 20, 0)]}
        with pytest.raises(RouteError, match="2"):
            load_route(doc)

    def test_single_waypoint_rejected(self):
        with pytest.raises(RouteError):
            load_route({"waypoints": [_wp(0.0, 0, 0)]})

    def test_bundled_campus_loop_fixture(self):
        path = Path(__file__).parent.parent / "src/beamtrack/data/routes/urban_campus.json"
        route = load_route(path)
        assert len(route.waypoints) >= 200
        assert route.path_length_m() > 1000.0 - 1e-6


class TestSampleRoute:
    route = load_route(
        {"waypoints": [_wp(0.0, 0.0, 0.0), _wp(10.0, 100.0, 0.0), _wp(20.0, 100.0, 100.0)]}
    )

    def test_knot_is_exact(self):
        pose = sample_route(self.route, 10.0)
        wp = self.route.waypoints[1]
        assert pose.position.lat_deg == pytest.approx(wp.lat_deg, abs=1e-12)
        assert pose.position.lon_deg == pytest.approx(wp.lon_deg, abs=1e-12)

    def test_segment_midpoint(self):
        pose = sample_route(self.route, 5.0)
        ref = enu_offset_fix(ORIGIN, EnuVector(50.0, 0.0, 0.0))
        assert distance_3d(pose.position, ref) < 0.01

    def test_heading_due_east(self):
        pose = sample_route(self.route, 5.0)
        assert pose.heading_deg == pytest.approx(90.0, abs=0.01)

    def test_heading_due_north_second_leg(self):
        pose = sample_route(self.route, 15.0)
        assert pose.heading_deg == pytest.approx(0.0, abs=0.01)

    def test_speed_constant_velocity(self):
        pose = sample_route(self.route, 5.0)
        assert pose.speed_mps == pytest.approx(10.0, abs=0.01)

    def test_outside_span_raises(self):
        with pytest.raises(RouteError):
            sample_route(self.route, 25.0)


def _pose(t_ns=0):
    return TruePose(
        position=GeoFix(ORIGIN.lat_deg, ORIGIN.lon_deg, ORIGIN.alt_m, t_ns=t_ns),
        heading_deg=45.0,
        speed_mps=1.0,
    )


class TestGnssSensor:
    def test_noiseless_config_returns_truth(self):
        cfg = SensorConfig(
            gnss_raw_sigma_enu_m=(0.0, 0.0, 0.0), rtk_residual_sigma_enu_m=(0.0, 0.0, 0.0)
        )
        sensor = GnssSensor(cfg, np.random.default_rng(0))
        fix = sensor.measure(_pose(), rtk_on=True)
        assert distance_3d(fix, _pose().position) < 1e-9

    def test_rtk_on_rms_at_paper_accuracy(self):
        cfg = SensorConfig()
        sensor = GnssSensor(cfg, np.random.default_rng(7))
        errors = []
        for i in range(10_000):
            pose = _pose(t_ns=i * 100_000_000)  # 10 Hz
            fix = sensor.measure(pose, rtk_on=True)
            errors.append(distance_3d(fix, pose.position))
        rms = math.sqrt(np.mean(np.square(errors)))
        assert rms <= 0.17

    def test_rtk_off_rms_matches_configured_sigmas(self):
        cfg = SensorConfig()
        sensor = GnssSensor(cfg, np.random.default_rng(7))
        errors = []
        for i in range(10_000):
            pose = _pose(t_ns=i * 100_000_000)
            fix = sensor.measure(pose, rtk_on=False)
            errors.append(distance_3d(fix, pose.position))
        rms = math.sqrt(np.mean(np.square(errors)))
        expected = math.sqrt(1.2**2 + 1.2**2 + 2.0**2)  # 2.63 m
        assert abs(rms - expected) / expected <= 0.20

    def test_rtk_flag_reflected_on_fix(self):
        sensor = GnssSensor(SensorConfig(), np.random.default_rng(1))
        assert sensor.measure(_pose(), rtk_on=True).rtk_applied
        assert not sensor.measure(_pose(), rtk_on=False).rtk_applied


class TestImuSensor:
    def test_sigma_zero_exact_heading(self):
        cfg = SensorConfig(imu_sigma_yaw_deg=0.0, imu_sigma_pitch_deg=0.0)
        sensor = ImuSensor(cfg, np.random.default_rng(0))
        yaw, pitch, _ = sensor.measure(_pose())
        assert yaw == pytest.approx(45.0)
        assert pitch == pytest.approx(0.0)

    def test_yaw_noise_std_matches_config(self):
        cfg = SensorConfig()
        sensor = ImuSensor(cfg, np.random.default_rng(3))
        samples = np.array([sensor.measure(_pose())[0] for _ in range(100_000)])
        assert np.std(samples - 45.0) == pytest.approx(0.7, rel=0.05)

    def test_pitch_unbiased(self):
        cfg = SensorConfig()
        sensor = ImuSensor(cfg, np.random.default_rng(5))
        n = 20_000
        samples = np.array([sensor.measure(_pose())[1] for _ in range(n)])
        assert abs(np.mean(samples)) <= 3 * 0.5 / math.sqrt(n)
