"""Equidistant waypoints, edge normals and trapezoidal time-parameterisation.

Positions are needle-path points in the garment frame (mm). The robot
executor turns them into end-effector motion; see :mod:`stitchsim.workcell`.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import geometry
from .errors import ValidationError
from .validation import check_points, check_positive

DEFAULT_V_MAX = 250.0
DEFAULT_A_MAX = 1000.0


class Waypoint(NamedTuple):
    x_traj: float
    y_traj: float
    theta: float


@dataclass(frozen=True)
class MotionLimits:
    v_max: float = DEFAULT_V_MAX
    a_max: float = DEFAULT_A_MAX

    def __post_init__(self):
        check_positive(self.v_max, "v_max")
        check_positive(self.a_max, "a_max")


@dataclass(frozen=True)
class SyncParams:
    stitch_length: float = 3.0
    stitch_rate: float = 10.0
    needle_rate_max: float = 25.0

    def __post_init__(self):
        check_positive(self.stitch_length, "stitch_length")
        check_positive(self.stitch_rate, "stitch_rate")
        check_positive(self.needle_rate_max, "needle_rate_max")


@dataclass(frozen=True)
class Bounds:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        if not (self.max_x > self.min_x and self.max_y > self.min_y):
            raise ValidationError(f"degenerate workspace bounds {self}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timed waypoints following a trapezoidal speed profile along their chain."""

    points: np.ndarray
    theta: np.ndarray
    timestamps: np.ndarray
    v_target: float
    limits: MotionLimits = field(default_factory=MotionLimits)
    # profile along the waypoint chain: peak speed, ramp time, ramp distance
    v_peak: float = 0.0
    t_ramp: float = 0.0
    s_ramp: float = 0.0

    def __len__(self):
        return len(self.points)

    @property
    def waypoints(self):
        return [Waypoint(float(x), float(y), float(t))
                for (x, y), t in zip(self.points, self.theta)]

    @property
    def duration(self):
        return float(self.timestamps[-1])

    @property
    def length(self):
        return float(self._cumlen[-1])

    @property
    def cruise_window(self):
        """(start, end) times of the constant-speed phase."""
        return self.t_ramp, self.duration - self.t_ramp

    @property
    def _cumlen(self):
        cum = self.__dict__.get("_cum")
        if cum is None:
            cum = geometry.cumulative_length(self.points)
            object.__setattr__(self, "_cum", cum)
        return cum

    def arclength_at(self, t):
        """Distance travelled along the chain at time ``t`` (clamped to [0, T])."""
        a = self.limits.a_max
        T, L = self.duration, self.length
        t = min(max(t, 0.0), T)
        if t <= self.t_ramp:
            return 0.5 * a * t * t
        if t >= T - self.t_ramp:
            return L - 0.5 * a * (T - t) ** 2
        return self.s_ramp + self.v_peak * (t - self.t_ramp)

    def speed_at(self, t):
        a = self.limits.a_max
        T = self.duration
        if t <= 0 or t >= T:
            return 0.0
        return min(self.v_peak, a * t, a * (T - t))

    def position_at(self, t):
        return geometry.point_at_arclength(self.points, self.arclength_at(t), self._cumlen)

    def index_at(self, t):
        """Index of the waypoint segment active at time ``t``."""
        k = int(np.searchsorted(self.timestamps, t, side="right")) - 1
        return min(max(k, 0), len(self.points) - 1)

    def theta_at(self, t):
        return float(self.theta[self.index_at(t)])

    def shifted(self, offset, from_index=0):
        """Copy with waypoints ``from_index`` onwards translated by ``offset``."""
        pts = np.array(self.points, dtype=float)
        pts[from_index:] += np.asarray(offset, dtype=float)
        return Trajectory(pts, self.theta, self.timestamps, self.v_target, self.limits,
                          self.v_peak, self.t_ramp, self.s_ramp)

    def to_rows(self):
        """``(n, 4)`` array of ``t, x, y, theta``."""
        return np.column_stack([self.timestamps, self.points, self.theta])


def resample_equidistant(polyline, spacing):
    """Points every ``spacing`` mm of arc length along ``polyline``, ends included."""
    pts = check_points(polyline, "polyline", min_points=2)
    spacing = check_positive(spacing, "spacing")
    cum = geometry.cumulative_length(pts)
    total = cum[-1]
    if total < spacing:
        raise ValidationError(f"polyline length {total:.6g} mm is shorter than spacing {spacing}")
    k = int(math.floor(total / spacing + 1e-9))
    s = spacing * np.arange(k + 1)
    if total - s[-1] <= 1e-6 * spacing:
        s[-1] = total
    else:
        s = np.append(s, total)
    out = geometry.point_at_arclength(pts, s, cum)
    out[0], out[-1] = pts[0], pts[-1]
    return out


def compute_normals(points, needle_ref, tie_ref=None):
    """Waypoints with the orientation of the segment normal facing the edge side.

    ``needle_ref`` is a single reference point or one per segment; for each
    segment the normal whose half-plane contains the reference wins. When the
    reference lies on the segment's line, ``tie_ref`` (typically the contour
    centroid) decides, falling back to the left-hand normal.
    """
    pts = check_points(points, "points", min_points=2)
    refs = np.asarray(needle_ref, dtype=float)
    if refs.shape == (2,):
        refs = np.broadcast_to(refs, (len(pts) - 1, 2))
    elif refs.shape != (len(pts) - 1, 2):
        raise ValidationError("needle_ref must be a point or one point per segment")
    d = np.diff(pts, axis=0)
    seg_len = np.hypot(d[:, 0], d[:, 1])
    if np.any(seg_len <= 1e-12):
        k = int(np.argmin(seg_len))
        raise ValidationError(f"duplicate consecutive points at index {k}")
    tangent = d / seg_len[:, None]
    left = np.column_stack([-tangent[:, 1], tangent[:, 0]])
    side = np.einsum("ij,ij->i", refs - pts[:-1], left)
    scale = np.maximum(seg_len, np.hypot(*(refs - pts[:-1]).T))
    ties = np.abs(side) <= 1e-12 * np.maximum(scale, 1.0)
    if np.any(ties) and tie_ref is not None:
        tie_side = np.einsum("ij,ij->i", np.asarray(tie_ref, dtype=float) - pts[:-1], left)
        side = np.where(ties, tie_side, side)
    sign = np.where(side < 0, -1.0, 1.0)
    normals = left * sign[:, None]
    theta = np.arctan2(normals[:, 1], normals[:, 0])
    theta = np.where(theta <= -math.pi, math.pi, theta)
    theta = np.append(theta, theta[-1])
    return [Waypoint(float(x), float(y), float(t)) for (x, y), t in zip(pts, theta)]


def sync_feed_velocity(sync: SyncParams):
    """Feed speed (mm/s) that lays one stitch every ``stitch_length`` mm."""
    if sync.stitch_rate > sync.needle_rate_max:
        raise ValidationError(
            f"needle speed exceeded: stitch_rate {sync.stitch_rate}/s > "
            f"needle_rate_max {sync.needle_rate_max}/s")
    return sync.stitch_length * sync.stitch_rate


def _as_waypoint_arrays(waypoints):
    if isinstance(waypoints, np.ndarray):
        arr = np.asarray(waypoints, dtype=float)
    else:
        arr = np.array([tuple(w) for w in waypoints], dtype=float)
    if arr.size == 0:
        raise ValidationError("empty waypoint list")
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ValidationError("waypoints must be (x, y[, theta]) rows")
    theta = arr[:, 2] if arr.shape[1] == 3 else np.zeros(len(arr))
    return arr[:, :2].copy(), theta.copy()


def time_parameterize(waypoints, v_target, limits=None):
    """Timestamp ``waypoints`` with a trapezoidal (or triangular) speed profile."""
    limits = limits or MotionLimits()
    pts, theta = _as_waypoint_arrays(waypoints)
    v_target = float(v_target)
    if not v_target > 0:
        raise ValidationError(f"v_target must be > 0, got {v_target}")
    if v_target > limits.v_max:
        raise ValidationError(f"v_target {v_target} exceeds v_max {limits.v_max}")
    if len(pts) < 2:
        raise ValidationError("need at least 2 waypoints to time a trajectory")
    cum = geometry.cumulative_length(pts)
    if np.any(np.diff(cum) <= 0):
        raise ValidationError("duplicate consecutive waypoints")
    a = limits.a_max
    L = cum[-1]
    s_ramp = v_target ** 2 / (2 * a)
    if 2 * s_ramp <= L:
        v_peak = v_target
    else:
        v_peak = math.sqrt(a * L)
        s_ramp = L / 2
    t_ramp = v_peak / a
    T = 2 * t_ramp + (L - 2 * s_ramp) / v_peak

    ramp_up = cum <= s_ramp
    ramp_down = cum >= L - s_ramp
    t = t_ramp + (cum - s_ramp) / v_peak
    t = np.where(ramp_up, np.sqrt(2 * cum / a), t)
    t = np.where(ramp_down & ~ramp_up, T - np.sqrt(np.maximum(2 * (L - cum) / a, 0.0)), t)
    t[0], t[-1] = 0.0, T
    return Trajectory(pts, theta, t, v_target, limits, v_peak, t_ramp, s_ramp)


def check_workspace(waypoints, bounds: Bounds):
    """Indices of waypoints outside the closed rectangle ``bounds``."""
    pts, _ = _as_waypoint_arrays(waypoints)
    outside = ((pts[:, 0] < bounds.min_x) | (pts[:, 0] > bounds.max_x)
               | (pts[:, 1] < bounds.min_y) | (pts[:, 1] > bounds.max_y))
    return [int(i) for i in np.nonzero(outside)[0]]


def edge_references(points, contour):
    """Nearest contour point to each segment midpoint, for normal disambiguation."""
    pts = np.asarray(points, dtype=float)
    mids = 0.5 * (pts[:-1] + pts[1:])
    _, nearest, _ = geometry.closest_points_on_polyline(mids, contour)
    return nearest


def plan_seam(thread, sync=None, limits=None, spacing=None):
    """Full planning pipeline: resample the seam, attach normals, time it."""
    sync = sync or SyncParams(stitch_length=thread.spec.stitch_length)
    spacing = spacing or sync.stitch_length
    pts = resample_equidistant(thread.seam, spacing)
    wps = compute_normals(pts, edge_references(pts, thread.contour), tie_ref=thread.centroid)
    return time_parameterize(wps, sync_feed_velocity(sync), limits)


class TrajectoryPlanner(BaseEstimator, TransformerMixin):
    """Estimator-style wrapper around :func:`plan_seam`.

    ``fit(thread)`` plans the seam and stores ``trajectory_``; ``transform``
    returns ``t, x, y, theta`` rows for a thread, and ``predict(times)`` gives
    needle-path positions on the fitted plan.
    """

    def __init__(self, stitch_rate=10.0, needle_rate_max=25.0, v_max=DEFAULT_V_MAX,
                 a_max=DEFAULT_A_MAX, spacing=None, workspace=None):
        self.stitch_rate = stitch_rate
        self.needle_rate_max = needle_rate_max
        self.v_max = v_max
        self.a_max = a_max
        self.spacing = spacing
        self.workspace = workspace

    def _plan(self, thread):
        sync = SyncParams(thread.spec.stitch_length, self.stitch_rate, self.needle_rate_max)
        traj = plan_seam(thread, sync, MotionLimits(self.v_max, self.a_max), self.spacing)
        if self.workspace is not None:
            bad = check_workspace(traj.points, Bounds(*self.workspace))
            if bad:
                raise ValidationError(f"waypoints outside workspace: {bad[:10]}")
        return traj

    def fit(self, X, y=None):
        self.trajectory_ = self._plan(X)
        self.v_target_ = self.trajectory_.v_target
        return self

    def transform(self, X):
        return self._plan(X).to_rows()

    def predict(self, times):
        check_is_fitted(self, "trajectory_")
        return np.array([self.trajectory_.position_at(float(t)) for t in np.ravel(times)])
