import math
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from shapely.geometry import Point, Polygon

from stitchsim import geometry
from stitchsim.digital_thread import DigitalThread, SeamSpec
from stitchsim.errors import ValidationError
from stitchsim.evaluation import (SimulationConfig, calibrate_drift, placement_error,
                                  render_run, results_csv, run_benchmark, seam_error, simulate)
from stitchsim.workcell import NO_SLIP, SlipModel, StitchRecord

WIDE = DigitalThread([[-50, 0], [80, 0], [80, 100], [-50, 100], [-50, 0]],
                     [[0, 20], [30, 20]], SeamSpec())


def record(points):
    return StitchRecord(tuple(map(tuple, points)), tuple(0.1 * i for i in range(len(points))))


# -- seam_error ------------------------------------------------------------------------

def test_hand_case():
    pts = [(1, 21), (5, 21), (9, 21), (11, 19), (15, 19), (19, 19), (21, 20), (25, 20), (29, 20)]
    rep = seam_error(record(pts), WIDE, 20.0)
    assert rep.n == 3
    assert [s.actual for s in rep.segments] == pytest.approx([21, 19, 20], abs=1e-12)
    assert rep.E == pytest.approx(2 / 3, abs=1e-12)
    assert round(rep.E, 4) == 0.6667


def test_exact_allowance_is_zero():
    pts = [(x, 20.0) for x in np.arange(0.5, 30, 3)]
    assert seam_error(record(pts), WIDE).E == 0.0


def test_200mm_seam_has_20_segments(straight):
    run = simulate(straight, "open")
    assert run["seam_error"]["n"] == 20
    assert run["E_mm"] == pytest.approx(0.0, abs=1e-9)


def test_no_stitches_rejected():
    with pytest.raises(ValidationError, match="no stitches"):
        seam_error(StitchRecord(), WIDE)


def brute_force_distances(points, contour):
    """Naive loops: nearest contour segment per stitch, shapely for the sign."""
    poly = Polygon(contour)
    dists = []
    for px, py in points:
        best = math.inf
        for (ax, ay), (bx, by) in zip(contour[:-1], contour[1:]):
            vx, vy = bx - ax, by - ay
            t = ((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy)
            t = min(max(t, 0.0), 1.0)
            best = min(best, math.hypot(px - ax - t * vx, py - ay - t * vy))
        dists.append(best if poly.contains(Point(px, py)) else -best)
    return dists


def brute_force_seam_error(points, thread, desired, seg_len=10.0):
    dists = brute_force_distances(points, [tuple(p) for p in thread.contour])
    seam_len = 0.0
    for a, b in zip(thread.seam[:-1], thread.seam[1:]):
        seam_len += math.dist(a, b)
    n = int(math.floor(seam_len / seg_len + 1e-9))
    s = [0.0]
    for a, b in zip(points[:-1], points[1:]):
        s.append(s[-1] + math.dist(a, b))
    total = 0.0
    for i in range(n):
        members = [d for d, si in zip(dists, s) if min(int(si // seg_len), n - 1) == i]
        if members:
            a_i = sum(members) / len(members)
        else:
            centre = (i + 0.5) * seg_len
            a_i = dists[min(range(len(s)), key=lambda k: abs(s[k] - centre))]
        total += abs(a_i - desired)
    return total / n


@pytest.mark.parametrize("name", ["straight", "arc"])
def test_matches_brute_force_on_random_records(name, request):
    thread = request.getfixturevalue(name)
    rng = np.random.default_rng(99)
    for _ in range(25):
        count = int(rng.integers(3, 90))
        s = np.sort(rng.uniform(0, thread.seam_length, count))
        pts = geometry.point_at_arclength(thread.seam, s) + rng.normal(0, 1.5, (count, 2))
        pts = [tuple(p) for p in pts]
        got = seam_error(record(pts), thread).E
        want = brute_force_seam_error(pts, thread, thread.spec.seam_allowance)
        assert got == pytest.approx(want, abs=1e-9)


def test_rigid_transform_invariance(arc):
    rng = np.random.default_rng(5)
    s = np.sort(rng.uniform(0, arc.seam_length, 50))
    pts = geometry.point_at_arclength(arc.seam, s) + rng.normal(0, 1.0, (50, 2))
    pose = (31.0, -17.0, 1.1)
    moved = DigitalThread(geometry.transform_points(arc.contour, pose),
                          geometry.transform_points(arc.seam, pose), arc.spec)
    e0 = seam_error(record(pts), arc).E
    e1 = seam_error(record(geometry.transform_points(pts, pose)), moved).E
    assert e1 == pytest.approx(e0, abs=1e-9)


def test_outward_shift_is_linear(straight):
    rng = np.random.default_rng(8)
    xs = np.sort(rng.uniform(40, 240, 70))
    ys = 20 + rng.uniform(1.0, 4.0, 70)        # every A_i above the allowance
    delta = 0.5
    e0 = seam_error(record(np.column_stack([xs, ys])), straight).E
    e1 = seam_error(record(np.column_stack([xs, ys - delta])), straight).E
    assert e0 - e1 == pytest.approx(delta, abs=1e-9)


# -- runs and benchmark --------------------------------------------------------------------

def test_simulate_rejects_bad_mode(straight):
    with pytest.raises(ValidationError):
        simulate(straight, "sideways")


def test_simulation_config_validation():
    with pytest.raises(ValidationError, match="unknown"):
        SimulationConfig.from_dict({"stich_rate": 10})
    with pytest.raises(ValidationError, match="sensor"):
        SimulationConfig.from_dict({"sensor": "sonar"})


def test_placement_error_seeded():
    cfg = SimulationConfig(placement_xy_sd=0.3, placement_theta_sd_deg=0.1)
    assert placement_error(cfg, 4) == placement_error(cfg, 4)
    assert placement_error(cfg, 4) != placement_error(cfg, 5)
    assert placement_error(SimulationConfig(), 4) == (0.0, 0.0, 0.0)


def test_benchmark_shape_and_determinism(straight):
    slip = SlipModel("constant_drift", (0.0, -2.9), noise_sd=0.3)
    a = results_csv(run_benchmark({"s": straight}, slip, runs_per_condition=2, seeds=[0, 1]))
    b = results_csv(run_benchmark({"s": straight}, slip, runs_per_condition=2, seeds=[0, 1]))
    assert a == b
    rows, summary = a.split("\n\n")
    assert rows.splitlines()[0] == "loop_type,disturbance,run,seed,E_mm,fixture"
    assert len(rows.splitlines()) == 1 + 4 * 2
    assert summary.splitlines()[0] == "loop_type,disturbance,runs,mean_E_mm"
    assert [ln.split(",")[:2] for ln in summary.splitlines()[1:]] == [
        ["open", "off"], ["open", "on"], ["closed", "off"], ["closed", "on"]]


def test_benchmark_seed_count_checked(straight):
    with pytest.raises(ValidationError):
        run_benchmark({"s": straight}, NO_SLIP, runs_per_condition=3, seeds=[0, 1])


def test_calibration_recovers_drift(straight):
    # the target is what a 2.5 mm/s drift produces, so bisection should land back on 2.5
    slip = SlipModel("constant_drift", (0.0, -2.5))
    target = np.mean([simulate(straight, "open", slip, s)["E_mm"] for s in range(3)])
    speed = calibrate_drift(straight, target=target, seeds=range(3), tol=0.005)
    assert speed == pytest.approx(2.5, abs=0.01)


# -- SVG ----------------------------------------------------------------------------------

SVG_NS = "{http://www.w3.org/2000/svg}"


def _path_points(d):
    return np.array([[float(x), float(y)] for x, y in re.findall(r"[ML]([-\d.]+),([-\d.]+)", d)])


def _plot(run, thread):
    root = ET.fromstring(render_run(run, thread))
    groups = {g.get("id"): g for g in root.iter(f"{SVG_NS}g")}
    return root, groups


def _px_per_mm(groups, thread):
    contour_px = _path_points(groups["contour"].find(f"{SVG_NS}path").get("d"))
    return np.ptp(contour_px[:, 0]) / np.ptp(thread.contour[:, 0])


def test_empty_run_has_axes_only():
    root, groups = _plot({}, None)
    assert "axes" in groups
    assert set(groups) == {"axes"}


def test_undisturbed_run_overlays_seam(straight):
    run = simulate(straight, "open")
    _, groups = _plot(run, straight)
    scale = _px_per_mm(groups, straight)
    seam_px = _path_points(groups["desired-seam"].find(f"{SVG_NS}path").get("d"))
    circles = np.array([[float(c.get("cx")), float(c.get("cy"))]
                        for c in groups["stitches"].iter(f"{SVG_NS}circle")])
    offset, _, _ = geometry.closest_points_on_polyline(circles, seam_px)
    assert len(circles) == len(run["stitches"]["points"])
    assert offset.max() / scale < 0.5


def test_disturbed_run_diverges(straight):
    slip = SlipModel("constant_drift", (0.0, -2.9))
    run = simulate(straight, "open", slip)
    _, groups = _plot(run, straight)
    scale = _px_per_mm(groups, straight)
    seam_px = _path_points(groups["desired-seam"].find(f"{SVG_NS}path").get("d"))
    circles = np.array([[float(c.get("cx")), float(c.get("cy"))]
                        for c in groups["stitches"].iter(f"{SVG_NS}circle")])
    offset, _, _ = geometry.closest_points_on_polyline(circles, seam_px)
    offset_mm = offset / scale
    times = np.array(run["stitches"]["times"])
    # drift moves the plotted stitch path 2.9 mm per second away from the seam
    np.testing.assert_allclose(offset_mm, 2.9 * times, atol=0.05)


def test_closed_loop_plot_marks_corrections(straight):
    run = simulate(straight, "closed", SlipModel("constant_drift", (0.0, -2.9)))
    _, groups = _plot(run, straight)
    assert len(list(groups["corrections"].iter(f"{SVG_NS}path"))) == len(run["events"])
