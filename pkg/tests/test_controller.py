import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stitchsim.controller import (ControllerConfig, ControlState, CorrectionCommand,
                                  OracleSensor, RasterSensor, apply_correction_and_replan,
                                  compute_correction, make_sensor, run_closed_loop)
from stitchsim.errors import TrackingLost, ValidationError
from stitchsim.evaluation import seam_error
from stitchsim.perception import EdgeMeasurement
from stitchsim.trajectory import plan_seam
from stitchsim.workcell import NO_SLIP, SlipModel, place_garment, run_open_loop

CTRL = ControlState(tol=1.0, desired_allowance=20.0)


def meas(d):
    return EdgeMeasurement(d, (0.0, 0.0))


# -- compute_correction ------------------------------------------------------------

def test_in_band_returns_none():
    assert compute_correction(meas(20.0), CTRL, 0.3) is None
    assert compute_correction(meas(21.0), CTRL, 0.3) is None


def test_axis_cases_exact():
    assert compute_correction(meas(25.0), CTRL, 0.0) == CorrectionCommand(5.0, 0.0, 5.0)
    assert compute_correction(meas(14.0), CTRL, math.pi / 2) == CorrectionCommand(0.0, -6.0, -6.0)


def test_dropout_coasts():
    assert compute_correction(EdgeMeasurement.invalid(), CTRL, 0.0) is None


def test_tol_must_be_positive():
    with pytest.raises(ValidationError):
        ControlState(tol=0.0)


def test_norm_identity_random_pairs():
    rng = np.random.default_rng(7)
    for d, theta in zip(rng.uniform(-30, 30, 1000), rng.uniform(-math.pi, math.pi, 1000)):
        if abs(d) <= CTRL.tol:
            continue
        cmd = compute_correction(meas(20.0 + d), CTRL, theta)
        assert cmd.x_correction ** 2 + cmd.y_correction ** 2 == pytest.approx(cmd.d ** 2, abs=1e-9)


@settings(max_examples=200)
@given(st.floats(1.01, 50) | st.floats(-50, -1.01), st.floats(-math.pi, math.pi))
def test_correction_direction(d, theta):
    cmd = compute_correction(meas(20.0 + d), CTRL, theta)
    assert cmd.x_correction == pytest.approx(cmd.d * math.cos(theta), abs=1e-12)
    assert cmd.y_correction == pytest.approx(cmd.d * math.sin(theta), abs=1e-12)


# -- apply_correction_and_replan ------------------------------------------------------

def test_replan_shifts_remaining_waypoints(straight):
    traj = plan_seam(straight)
    ctrl = ControlState(plan=traj, waypoint_index=10)
    out = apply_correction_and_replan(ctrl, CorrectionCommand(5.0, 0.0, 5.0))
    assert out.origin == (5.0, 0.0)
    assert not out.corr
    np.testing.assert_array_equal(out.plan.points[10:, 0], traj.points[10:, 0] + 5.0)
    np.testing.assert_array_equal(out.plan.points[:10], traj.points[:10])
    np.testing.assert_array_equal(out.plan.timestamps, traj.timestamps)


def test_corrections_accumulate(straight):
    traj = plan_seam(straight)
    ctrl = ControlState(plan=traj, waypoint_index=3)
    ctrl = apply_correction_and_replan(ctrl, CorrectionCommand(5.0, 0.0, 5.0))
    ctrl = apply_correction_and_replan(ControlState(**{**ctrl.__dict__, "waypoint_index": 8}),
                                       CorrectionCommand(0.0, -2.0, -2.0))
    assert ctrl.origin == (5.0, -2.0)
    # from the latest index on, the plan sits at x_traj + origin exactly
    np.testing.assert_array_equal(ctrl.plan.points[8:] - traj.points[8:],
                                  np.broadcast_to(ctrl.origin, traj.points[8:].shape))


def test_in_band_leaves_plan_untouched(straight):
    traj = plan_seam(straight)
    ctrl = ControlState(plan=traj)
    assert compute_correction(meas(20.4), ctrl, 0.0) is None
    assert ctrl.plan is traj


# -- closed loop ------------------------------------------------------------------------

# the spline panel's seam wanders 15-35 mm from a straight edge, so it never stays in band
@pytest.mark.parametrize("name", ["straight", "arc"])
def test_dead_band_bit_identical(name, request):
    thread = request.getfixturevalue(name)
    traj = plan_seam(thread)
    initial = place_garment(thread, (0.2, -0.1, 0.002))
    _, open_st = run_open_loop(traj, initial)
    _, closed_st, events = run_closed_loop(thread, traj, initial, NO_SLIP,
                                           ctrl_cfg=ControllerConfig(tol=1.0))
    assert events == []
    assert open_st == closed_st


def test_drift_triggers_corrections_and_helps(straight):
    traj = plan_seam(straight)
    slip = SlipModel("constant_drift", (0.0, -2.0), seed=3)
    _, open_st = run_open_loop(traj, place_garment(straight), slip)
    _, closed_st, events = run_closed_loop(straight, traj, place_garment(straight), slip)
    corrections = [e for e in events if e["type"] == "correction"]
    assert len(corrections) >= 5
    assert seam_error(closed_st, straight).E < seam_error(open_st, straight).E


def test_arc_corrections_follow_waypoint_normals(arc):
    traj = plan_seam(arc)
    slip = SlipModel("constant_drift", (0.0, -2.9), seed=1)
    _, _, events = run_closed_loop(arc, traj, place_garment(arc), slip)
    corrections = [e for e in events if e["type"] == "correction"]
    assert corrections
    assert any(abs(e["x_correction"]) > 1e-3 and abs(e["y_correction"]) > 1e-3
               for e in corrections)
    for e in corrections:
        theta = traj.theta_at(e["t"])
        assert e["theta"] == theta
        assert e["x_correction"] == pytest.approx(e["d"] * math.cos(theta), abs=1e-12)
        assert e["y_correction"] == pytest.approx(e["d"] * math.sin(theta), abs=1e-12)
        assert e["x_correction"] ** 2 + e["y_correction"] ** 2 == pytest.approx(e["d"] ** 2,
                                                                                abs=1e-9)


@pytest.mark.parametrize("speed", [1.0, 2.0, 3.0])
@pytest.mark.parametrize("direction", [(0.0, -1.0), (0.0, 1.0), (0.6, -0.8)])
def test_corrections_stay_bounded(straight, speed, direction):
    traj = plan_seam(straight)
    slip = SlipModel("constant_drift", (speed * direction[0], speed * direction[1]),
                     noise_sd=0.3, seed=2)
    _, stitches, events = run_closed_loop(straight, traj, place_garment(straight), slip)
    first = next(e for e in events if e["type"] == "correction")
    deviation = np.abs(np.array(seam_error(stitches, straight).stitch_distances) - 20.0)
    assert deviation.max() <= 2 * abs(first["d"])


class _BlindSensor:
    def __init__(self, blind_from=0.0, blind_to=math.inf, thread=None):
        self.blind_from, self.blind_to = blind_from, blind_to
        self.oracle = OracleSensor(thread) if thread is not None else None

    def __call__(self, state, t):
        if self.blind_from <= t < self.blind_to:
            return EdgeMeasurement.invalid(t)
        return self.oracle(state, t)


def test_long_dropout_loses_tracking(straight):
    with pytest.raises(TrackingLost, match="tracking lost"):
        run_closed_loop(straight, plan_seam(straight), place_garment(straight),
                        sensor=_BlindSensor())


def test_short_dropout_coasts(straight):
    sensor = _BlindSensor(1.0, 1.5, straight)
    _, stitches, events = run_closed_loop(straight, plan_seam(straight), place_garment(straight),
                                          sensor=sensor)
    assert any(e["type"] == "dropout" for e in events)
    assert len(stitches) > 60


def test_raster_sensor_closed_loop(straight):
    traj = plan_seam(straight)
    slip = SlipModel("constant_drift", (0.0, -2.9), noise_sd=0.3, seed=1)
    sensor = RasterSensor(straight, seed=1)
    _, closed_st, events = run_closed_loop(straight, traj, place_garment(straight), slip, sensor)
    _, open_st = run_open_loop(traj, place_garment(straight), slip)
    assert any(e["type"] == "correction" for e in events)
    assert seam_error(closed_st, straight).E < 1.5 < seam_error(open_st, straight).E


def test_make_sensor(straight):
    assert isinstance(make_sensor("oracle", straight), OracleSensor)
    assert isinstance(make_sensor("raster", straight), RasterSensor)
    with pytest.raises(ValueError):
        make_sensor("sonar", straight)
