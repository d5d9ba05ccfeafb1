"""Seam error metric, the open/closed x disturbance benchmark, and SVG plots."""

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import geometry
from .controller import ControllerConfig, make_sensor, run_closed_loop
from .errors import ValidationError
from .trajectory import MotionLimits, SyncParams, plan_seam
from .workcell import DEFAULT_DT, NO_SLIP, SlipModel, StitchRecord, place_garment, run_open_loop

logger = logging.getLogger(__name__)

SEGMENT_LENGTH = 10.0
QUALITY_BOUND_MM = 3.0


@dataclass(frozen=True)
class SegmentError:
    index: int
    actual: float
    desired: float


@dataclass(frozen=True)
class SeamErrorReport:
    segments: tuple
    n: int
    E: float
    stitch_distances: tuple = ()

    def to_dict(self):
        return {"n": self.n, "E_mm": self.E,
                "segments": [{"i": s.index, "A_mm": s.actual, "D_mm": s.desired}
                             for s in self.segments]}


def _stitch_points(stitches):
    if isinstance(stitches, StitchRecord):
        return stitches.as_array()
    return np.asarray(stitches, dtype=float).reshape(-1, 2)


def seam_error(stitches, thread, desired_allowance=None, segment_length=SEGMENT_LENGTH):
    """Mean absolute stitch-to-edge deviation over 10 mm segments of the seam.

    Stitches are binned by arc length along the stitched path; ``A_i`` is the
    mean signed distance (positive inside the garment) of the bin's stitches
    to the contour. A bin that received no stitch takes the reading of the
    stitch nearest its centre.
    """
    pts = _stitch_points(stitches)
    if len(pts) == 0:
        raise ValidationError("no stitches to evaluate")
    desired = thread.spec.seam_allowance if desired_allowance is None else float(desired_allowance)
    n = int(math.floor(thread.seam_length / segment_length + 1e-9))
    if n < 1:
        raise ValidationError(
            f"seam length {thread.seam_length:.3f} mm is shorter than one segment")
    dist, _ = geometry.signed_distance(pts, thread.contour)
    s = geometry.cumulative_length(pts)
    bins = np.minimum((s // segment_length).astype(int), n - 1)
    segments = []
    for i in range(n):
        members = bins == i
        if members.any():
            a = float(dist[members].mean())
        else:
            a = float(dist[np.argmin(np.abs(s - (i + 0.5) * segment_length))])
        segments.append(SegmentError(i, a, desired))
    E = float(np.mean([abs(seg.actual - seg.desired) for seg in segments]))
    return SeamErrorReport(tuple(segments), n, E, tuple(float(d) for d in dist))


# ---------------------------------------------------------------------------
# Runs and benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationConfig:
    stitch_rate: float = 10.0
    needle_rate_max: float = 25.0
    v_max: float = 250.0
    a_max: float = 1000.0
    tol: float = 1.0
    sensor: str = "oracle"
    dt: float = DEFAULT_DT
    placement_xy_sd: float = 0.0
    placement_theta_sd_deg: float = 0.0

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown simulation keys: {sorted(unknown)}")
        cfg = cls(**d)
        if cfg.sensor not in ("oracle", "raster"):
            raise ValidationError(f"sensor must be 'oracle' or 'raster', got {cfg.sensor!r}")
        return cfg


def placement_error(cfg, seed):
    """Per-run placement perturbation drawn from its own seeded stream."""
    if cfg.placement_xy_sd == 0 and cfg.placement_theta_sd_deg == 0:
        return (0.0, 0.0, 0.0)
    rng = np.random.default_rng([seed, 0x5EA])
    dx, dy = rng.normal(0.0, cfg.placement_xy_sd, 2) if cfg.placement_xy_sd else (0.0, 0.0)
    dth = math.radians(rng.normal(0.0, cfg.placement_theta_sd_deg)) \
        if cfg.placement_theta_sd_deg else 0.0
    return (float(dx), float(dy), float(dth))


def simulate(thread, mode, slip=NO_SLIP, seed=0, cfg=None, traj=None):
    """One seeded sewing run; returns a JSON-ready dict."""
    cfg = cfg or SimulationConfig()
    if mode not in ("open", "closed"):
        raise ValidationError(f"mode must be 'open' or 'closed', got {mode!r}")
    if traj is None:
        sync = SyncParams(thread.spec.stitch_length, cfg.stitch_rate, cfg.needle_rate_max)
        traj = plan_seam(thread, sync, MotionLimits(cfg.v_max, cfg.a_max))
    if slip.mode != "none" and slip.seed is None:
        slip = SlipModel(slip.mode, slip.drift_velocity, slip.lag_factor, slip.noise_sd, seed)
    initial = place_garment(thread, placement_error(cfg, seed), cfg.stitch_rate)
    events = []
    if mode == "open":
        final, stitches = run_open_loop(traj, initial, slip, cfg.dt)
    else:
        sensor = make_sensor(cfg.sensor, thread, seed=seed)
        final, stitches, events = run_closed_loop(
            thread, traj, initial, slip, sensor, ControllerConfig(tol=cfg.tol), cfg.dt)
    report = seam_error(stitches, thread)
    return {"mode": mode, "seed": seed, "slip": slip.to_dict(),
            "stitches": stitches.to_dict(),
            "stitch_edge_distances_mm": list(report.stitch_distances),
            "seam_error": report.to_dict(), "E_mm": report.E,
            "final_state": final.to_dict(), "events": events}


@dataclass(frozen=True)
class BenchmarkResult:
    loop: str
    disturbance: str
    seeds: tuple
    errors: tuple
    fixture: Optional[str] = None

    @property
    def runs(self):
        return len(self.errors)

    @property
    def mean_E(self):
        return float(np.mean(self.errors))

    @property
    def condition(self):
        return {"loop": self.loop, "disturbance": self.disturbance}


CONDITIONS = (("open", "off"), ("open", "on"), ("closed", "off"), ("closed", "on"))


def _bench_job(args):
    thread, loop, slip, seed, cfg = args
    return simulate(thread, loop, slip, seed, cfg)["E_mm"]


def run_benchmark(fixtures, slip, cfg=None, runs_per_condition=10, seeds=None, jobs=1):
    """Open/closed loop x disturbance off/on, ``runs_per_condition`` paired seeds each.

    ``fixtures`` maps a name to a DigitalThread. Every condition reuses the
    same seed list so runs pair up across conditions.
    """
    cfg = cfg or SimulationConfig()
    seeds = list(range(runs_per_condition)) if seeds is None else list(seeds)
    if len(seeds) != runs_per_condition:
        raise ValidationError(f"need {runs_per_condition} seeds, got {len(seeds)}")
    jobs_list, keys = [], []
    for name, thread in fixtures.items():
        for loop, dist in CONDITIONS:
            run_slip = slip if dist == "on" else NO_SLIP
            for seed in seeds:
                jobs_list.append((thread, loop, run_slip, seed, cfg))
                keys.append((name, loop, dist))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            errors = list(pool.map(_bench_job, jobs_list))
    else:
        errors = [_bench_job(job) for job in jobs_list]
    grouped = {}
    for key, err in zip(keys, errors):
        grouped.setdefault(key, []).append(err)
    return [BenchmarkResult(loop, dist, tuple(seeds), tuple(errs), name)
            for (name, loop, dist), errs in grouped.items()]


def pool_results(results):
    """Merge per-fixture results into one result per condition."""
    merged = {}
    for r in results:
        key = (r.loop, r.disturbance)
        seeds, errs = merged.get(key, ((), ()))
        merged[key] = (seeds + r.seeds, errs + r.errors)
    return [BenchmarkResult(loop, dist, *merged[(loop, dist)])
            for loop, dist in CONDITIONS if (loop, dist) in merged]


def results_csv(results):
    """Per-run rows followed by a per-condition summary block."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["loop_type", "disturbance", "run", "seed", "E_mm", "fixture"])
    for r in results:
        for run, (seed, err) in enumerate(zip(r.seeds, r.errors)):
            w.writerow([r.loop, r.disturbance, run, seed, f"{err:.6f}", r.fixture or ""])
    w.writerow([])
    w.writerow(["loop_type", "disturbance", "runs", "mean_E_mm"])
    for r in pool_results(results):
        w.writerow([r.loop, r.disturbance, r.runs, f"{r.mean_E:.6f}"])
    return buf.getvalue()


def calibrate_drift(thread, direction=(0.0, -1.0), target=9.775, seeds=range(10), cfg=None,
                    noise_sd=0.0, lo=0.0, hi=8.0, tol=0.01):
    """Bisect the drift speed so the open-loop disturbed mean E hits ``target``."""
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.hypot(*direction)

    def mean_e(speed):
        slip = SlipModel("constant_drift", tuple(speed * direction), noise_sd=noise_sd)
        return float(np.mean([simulate(thread, "open", slip, s, cfg)["E_mm"] for s in seeds]))

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mean_e(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Plotting
# ---------------------------------------------------------------------------

def _nice_step(span):
    raw = span / 8.0
    mag = 10 ** math.floor(math.log10(raw)) if raw > 0 else 1.0
    for m in (1, 2, 5, 10):
        if raw <= m * mag:
            return m * mag
    return 10 * mag


def render_run(run, thread, width=800, height=600, margin=50):
    """SVG of contour, desired seam, stitch path and correction markers (mm axes)."""
    stitches = np.asarray((run or {}).get("stitches", {}).get("points", []),
                          dtype=float).reshape(-1, 2)
    events = [e for e in (run or {}).get("events", []) if e.get("type") == "correction"]
    geoms = [thread.contour, thread.seam] if thread is not None else []
    if len(stitches):
        geoms.append(stitches)
    if geoms:
        allpts = np.vstack(geoms)
        lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    else:
        lo, hi = np.array([0.0, 0.0]), np.array([100.0, 100.0])
    span = np.maximum(hi - lo, 1e-9)
    scale = min((width - 2 * margin) / span[0], (height - 2 * margin) / span[1])

    def xy(p):
        return (margin + (p[0] - lo[0]) * scale, height - margin - (p[1] - lo[1]) * scale)

    def path(points, **attrs):
        d = " ".join(f"{'M' if i == 0 else 'L'}{x:.2f},{y:.2f}"
                     for i, (x, y) in enumerate(xy(p) for p in points))
        extra = " ".join(f'{k.replace("_", "-")}="{v}"' for k, v in attrs.items())
        return f'<path d="{d}" fill="none" {extra}/>'

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>',
           '<g id="axes" stroke="black" stroke-width="1" font-size="10" font-family="sans-serif">']
    x0, y0 = xy(lo)
    x1, y1 = xy(hi)
    out.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y0:.2f}"/>')
    out.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x0:.2f}" y2="{y1:.2f}"/>')
    for axis in (0, 1):
        step = _nice_step(span[axis])
        v = math.ceil(lo[axis] / step) * step
        while v <= hi[axis] + 1e-9:
            p = (v, lo[1]) if axis == 0 else (lo[0], v)
            px, py = xy(p)
            if axis == 0:
                out.append(f'<line x1="{px:.2f}" y1="{py:.2f}" x2="{px:.2f}" y2="{py + 4:.2f}"/>')
                out.append(f'<text x="{px:.2f}" y="{py + 15:.2f}" text-anchor="middle" '
                           f'stroke="none">{v:g}</text>')
            else:
                out.append(f'<line x1="{px - 4:.2f}" y1="{py:.2f}" x2="{px:.2f}" y2="{py:.2f}"/>')
                out.append(f'<text x="{px - 6:.2f}" y="{py + 3:.2f}" text-anchor="end" '
                           f'stroke="none">{v:g}</text>')
            v += step
    out.append(f'<text x="{width / 2:.0f}" y="{height - 10}" text-anchor="middle" '
               f'stroke="none">x (mm)</text>')
    out.append(f'<text x="12" y="{height / 2:.0f}" stroke="none" '
               f'transform="rotate(-90 12 {height / 2:.0f})">y (mm)</text>')
    out.append('</g>')
    if thread is not None:
        out.append('<g id="contour">' + path(thread.contour, stroke="black",
                                             stroke_width=1.5) + '</g>')
        out.append('<g id="desired-seam">' + path(thread.seam, stroke="green",
                                                  stroke_dasharray="6,3") + '</g>')
    if len(stitches):
        marks = "".join(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.5"/>'
                        for x, y in (xy(p) for p in stitches))
        out.append('<g id="stitches" fill="red">' + path(stitches, stroke="red") + marks + '</g>')
    if events:
        marks = []
        for e in events:
            p = e.get("needle_in_garment")
            if p is None:
                continue
            x, y = xy(p)
            marks.append(f'<path d="M{x - 3:.2f},{y - 3:.2f} L{x + 3:.2f},{y + 3:.2f} '
                         f'M{x - 3:.2f},{y + 3:.2f} L{x + 3:.2f},{y - 3:.2f}"/>')
        out.append('<g id="corrections" stroke="blue" stroke-width="1">' + "".join(marks) + '</g>')
    out.append('</svg>')
    return "\n".join(out) + "\n"
