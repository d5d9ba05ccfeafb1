import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stitchsim import geometry
from stitchsim.errors import ValidationError
from stitchsim.trajectory import (Bounds, MotionLimits, SyncParams, TrajectoryPlanner,
                                  check_workspace, compute_normals, plan_seam,
                                  resample_equidistant, sync_feed_velocity, time_parameterize)


# -- resample_equidistant --------------------------------------------------------

def test_uniform_segment():
    pts = resample_equidistant([[0, 0], [10, 0]], 2.5)
    np.testing.assert_allclose(pts[:, 0], [0, 2.5, 5, 7.5, 10])
    np.testing.assert_allclose(pts[:, 1], 0)


def test_l_shape_walk():
    pts = resample_equidistant([[0, 0], [5, 0], [5, 5]], 2)
    assert len(pts) == 6
    np.testing.assert_allclose(pts[3], [5, 1])


def test_square_perimeter_divisible():
    square = [[0, 0], [10, 0], [10, 10], [0, 10], [0, 0]]
    pts = resample_equidistant(square, 4)
    assert len(pts) == 11
    # gaps are measured along the perimeter; chords across corners are shorter
    s = np.append(_arc_positions(pts[:-1], square), 40.0)  # the end closes onto the start
    gaps = np.diff(s)
    np.testing.assert_allclose(gaps, 4.0, atol=1e-12)


def test_too_short_polyline():
    with pytest.raises(ValidationError, match="shorter"):
        resample_equidistant([[0, 0], [1, 0]], 2)


def _arc_positions(points, polyline):
    cum = geometry.cumulative_length(polyline)
    _, nearest, seg = geometry.closest_points_on_polyline(points, polyline)
    poly = np.asarray(polyline, dtype=float)
    return cum[seg] + np.hypot(*(nearest - poly[seg]).T)


monotone_polylines = st.lists(
    st.tuples(st.floats(0.5, 30), st.floats(-20, 20)), min_size=1, max_size=12).map(
    lambda steps: np.vstack([[0.0, 0.0], np.cumsum(np.array(steps), axis=0)]))


@settings(max_examples=100, deadline=None)
@given(monotone_polylines, st.floats(0.3, 5.0))
def test_resampled_gaps_sum_to_length(poly, spacing):
    total = geometry.polyline_length(poly)
    if total < spacing:
        return
    pts = resample_equidistant(poly, spacing)
    s = _arc_positions(pts, poly)
    gaps = np.diff(s)
    assert gaps.sum() == pytest.approx(total, rel=1e-9)
    np.testing.assert_allclose(gaps[:-1], spacing, rtol=1e-6)
    assert 0 < gaps[-1] <= spacing * (1 + 1e-6)


# -- compute_normals -------------------------------------------------------------

def test_horizontal_seam_edge_below():
    wps = compute_normals([[0, 0], [10, 0], [20, 0]], needle_ref=(5, -20))
    assert all(w.theta == pytest.approx(-math.pi / 2) for w in wps)


def test_vertical_seam_edge_right():
    wps = compute_normals([[0, 0], [0, 10], [0, 20]], needle_ref=(20, 5))
    assert all(w.theta == pytest.approx(0.0, abs=1e-15) for w in wps)


def test_quarter_circle_midpoint_normal():
    r, m = 50.0, 20
    ang = np.linspace(0, math.pi / 2, 2 * m)
    pts = r * np.column_stack([np.cos(ang), np.sin(ang)])
    mids = 0.5 * (pts[:-1] + pts[1:])
    wps = compute_normals(pts, needle_ref=1.5 * mids)
    # segment m-1 straddles 45 degrees symmetrically
    assert wps[m - 1].theta == pytest.approx(math.pi / 4, abs=1e-6)


def test_theta_range_and_duplicates():
    wps = compute_normals([[0, 0], [0, -10]], needle_ref=(-5, -5))
    assert wps[0].theta == pytest.approx(math.pi)
    with pytest.raises(ValidationError, match="duplicate"):
        compute_normals([[0, 0], [0, 0], [1, 0]], (0, -1))


@settings(max_examples=50, deadline=None)
@given(monotone_polylines, st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_theta_translation_invariant(poly, dx, dy):
    ref = poly.mean(axis=0) + (0.0, -40.0)
    a = compute_normals(poly, ref)
    b = compute_normals(poly + (dx, dy), ref + (dx, dy))
    np.testing.assert_allclose([w.theta for w in a], [w.theta for w in b], atol=1e-9)


# -- sync_feed_velocity ------------------------------------------------------------

def test_feed_velocity_examples():
    assert sync_feed_velocity(SyncParams(3, 10, 25)) == 30
    assert sync_feed_velocity(SyncParams(2, 25, 25)) == 50
    with pytest.raises(ValidationError, match="needle speed exceeded"):
        sync_feed_velocity(SyncParams(3, 30, 25))


# -- time_parameterize -------------------------------------------------------------

def integrate_trapezoid(length, v, a, dt=1e-6):
    """Independent Euler integration of accelerate / cruise / brake."""
    s = speed = t = 0.0
    while s < length:
        remaining = length - s
        if speed * speed / (2 * a) >= remaining:
            speed = max(speed - a * dt, 1e-9)
        else:
            speed = min(speed + a * dt, v)
        s += speed * dt
        t += dt
    return t


def test_200mm_trapezoid_total_time():
    traj = time_parameterize([(0, 0, 0), (200, 0, 0)], 30, MotionLimits(250, 300))
    numeric = integrate_trapezoid(200, 30, 300)
    assert numeric == pytest.approx(6.7667, abs=1e-3)
    assert traj.duration == pytest.approx(numeric, abs=1e-3)
    assert traj.s_ramp == pytest.approx(1.5)


def test_short_path_is_triangular():
    traj = time_parameterize([(0, 0, 0), (1, 0, 0)], 30, MotionLimits(250, 300))
    assert traj.v_peak == pytest.approx(math.sqrt(300), rel=1e-9)
    assert traj.v_peak == pytest.approx(17.32, abs=5e-3)
    ts = np.linspace(0, traj.duration, 2001)
    assert max(traj.speed_at(t) for t in ts) <= traj.v_peak + 1e-12


@pytest.mark.parametrize("bad", [0, -1])
def test_nonpositive_speed_rejected(bad):
    with pytest.raises(ValidationError):
        time_parameterize([(0, 0, 0), (10, 0, 0)], bad)


def test_empty_and_overspeed_rejected():
    with pytest.raises(ValidationError, match="empty"):
        time_parameterize([], 30)
    with pytest.raises(ValidationError):
        time_parameterize([(0, 0, 0), (10, 0, 0)], 300, MotionLimits(250, 1000))


def secant_kinematics(traj):
    """Speeds between consecutive waypoints and the accelerations between those speeds."""
    dt = np.diff(traj.timestamps)
    speed = np.hypot(*np.diff(traj.points, axis=0).T) / dt
    mids = 0.5 * (traj.timestamps[:-1] + traj.timestamps[1:])
    accel = np.diff(speed) / np.diff(mids)
    return speed, accel, mids


def random_timed_path(rng):
    n = rng.integers(2, 60)
    steps = rng.uniform(0.1, 20, n)[:, None] * np.column_stack(
        [np.cos(a := rng.uniform(-math.pi, math.pi, n)), np.sin(a)])
    pts = np.vstack([[0, 0], np.cumsum(steps, axis=0)])
    limits = MotionLimits(rng.uniform(50, 400), rng.uniform(100, 3000))
    v = rng.uniform(1, limits.v_max)
    return time_parameterize(pts, v, limits)


def test_limits_on_1000_random_paths():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        traj = random_timed_path(rng)
        speed, accel, mids = secant_kinematics(traj)
        assert speed.max() <= traj.limits.v_max + 1e-6
        assert np.abs(accel).max(initial=0.0) <= traj.limits.a_max + 1e-6
        t0, t1 = traj.cruise_window
        inside = (traj.timestamps[:-1] >= t0 - 1e-12) & (traj.timestamps[1:] <= t1 + 1e-12)
        if traj.v_peak == traj.v_target and inside.any():
            np.testing.assert_allclose(speed[inside], traj.v_target, rtol=0.02)


def test_profile_speed_matches_position_derivative():
    traj = time_parameterize([(0, 0, 0), (50, 0, 0), (50, 40, 0)], 40, MotionLimits(250, 500))
    h = 1e-6
    for t in np.linspace(0.01, traj.duration - 0.01, 50):
        s1, s0 = traj.arclength_at(t + h), traj.arclength_at(t - h)
        assert (s1 - s0) / (2 * h) == pytest.approx(traj.speed_at(t), abs=1e-3)


# -- workspace and planner --------------------------------------------------------------

def test_workspace_checks():
    b = Bounds(0, 0, 100, 100)
    assert check_workspace([(10, 10, 0), (50, 50, 0)], b) == []
    assert check_workspace([(10, 10, 0), (101, 50, 0)], b) == [1]
    assert check_workspace([(100, 100, 0), (0, 0, 0)], b) == []


def test_plan_seam_straight(straight):
    traj = plan_seam(straight)
    assert len(traj) == 68  # 0, 3, ..., 198 and the 200 mm end
    assert traj.v_target == 30
    assert all(w.theta == pytest.approx(-math.pi / 2) for w in traj.waypoints)


def test_planner_estimator(straight):
    planner = TrajectoryPlanner().fit(straight)
    rows = planner.transform(straight)
    assert rows.shape == (68, 4)
    np.testing.assert_allclose(planner.predict([0.0, planner.trajectory_.duration]),
                               [straight.seam[0], straight.seam[-1]])
    with pytest.raises(ValidationError, match="workspace"):
        TrajectoryPlanner(workspace=(0, 0, 100, 100)).fit(straight)
