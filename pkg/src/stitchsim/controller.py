"""Closed-loop seam tracking: per-cycle edge correction and replanning.

Each control cycle reads the needle-to-edge distance, compares it with the
seam allowance, and when the deviation leaves the tolerance band shifts the
plan origin by ``d * (cos theta, sin theta)``, where ``theta`` is the
precomputed edge normal of the active waypoint. Commanded needle-path
positions are always ``waypoint + origin``.

Corrections live in the needle-path (garment) frame: a positive ``d`` moves
the needle towards the edge.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import TrackingLost
from .perception import (DEFAULT_ROI_HALF_EXTENT, CameraModel, detect_edges,
                         dynamic_thresholds, needle_edge_distance, oracle_edge_distance,
                         render_garment)
from .trajectory import Trajectory
from .validation import check_positive
from .workcell import DEFAULT_DT, NO_SLIP, execute

logger = logging.getLogger(__name__)

DROPOUT_TIMEOUT = 1.0


@dataclass(frozen=True)
class CorrectionCommand:
    x_correction: float
    y_correction: float
    d: float


@dataclass(frozen=True, eq=False)
class ControlState:
    origin: tuple = (0.0, 0.0)
    waypoint_index: int = 0
    corr: bool = False
    tol: float = 1.0
    desired_allowance: float = 20.0
    plan: Optional[Trajectory] = None

    def __post_init__(self):
        check_positive(self.tol, "tol")


@dataclass(frozen=True)
class ControllerConfig:
    tol: float = 1.0
    allowance: Optional[float] = None
    dropout_timeout: float = DROPOUT_TIMEOUT

    def __post_init__(self):
        check_positive(self.tol, "tol")


def _unit(theta):
    """(cos, sin) of ``theta``, exact on the axes so axis-aligned seams get pure x or y moves."""
    quarter = theta / (math.pi / 2)
    k = round(quarter)
    if abs(quarter - k) < 1e-15:
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[k % 4]
    return math.cos(theta), math.sin(theta)


def compute_correction(measurement, ctrl, theta):
    """Correction for one measurement, or ``None`` inside the tolerance band."""
    if not measurement.valid:
        logger.debug("measurement dropout at t=%.3f; coasting on plan", measurement.timestamp)
        return None
    deviation = measurement.edge_dist - ctrl.desired_allowance
    if abs(deviation) <= ctrl.tol:
        return None
    c, s = _unit(theta)
    return CorrectionCommand(deviation * c, deviation * s, deviation)


def apply_correction_and_replan(ctrl, cmd):
    """Shift the origin by ``cmd`` and re-anchor the remaining waypoints."""
    origin = (ctrl.origin[0] + cmd.x_correction, ctrl.origin[1] + cmd.y_correction)
    plan = ctrl.plan
    if plan is not None:
        plan = plan.shifted((cmd.x_correction, cmd.y_correction), ctrl.waypoint_index)
    # corr is raised by the correction and lowered again once the replan is in place
    return replace(ctrl, origin=origin, plan=plan, corr=False)


class OracleSensor:
    """Exact geometric edge distance at the needle."""

    def __init__(self, thread):
        self.thread = thread

    def __call__(self, state, t):
        return oracle_edge_distance(self.thread, state.garment_pose, (0.0, 0.0), t)


class RasterSensor:
    """Needle-camera pipeline: render, median thresholds, Canny, nearest edge.

    Thresholds are recomputed once per ``window`` seconds from every frame
    captured during the previous window.
    """

    def __init__(self, thread, camera=None, fill=180, background=60, noise_sd=2.0,
                 seed=0, roi_half_extent=DEFAULT_ROI_HALF_EXTENT, window=1.0):
        self.thread = thread
        self.camera = camera or CameraModel.centered_on_needle()
        self.fill = fill
        self.background = background
        self.noise_sd = noise_sd
        self.roi_half_extent = roi_half_extent
        self.window = window
        self._rng = np.random.default_rng(seed)
        self._frames = []
        self._window_start = None
        self._thresholds = None

    def frame(self, state):
        return render_garment(self.thread, state.garment_pose, self.camera, self.fill,
                              self.background, self.noise_sd,
                              seed=int(self._rng.integers(2 ** 63)))

    def __call__(self, state, t):
        img = self.frame(state)
        if self._thresholds is None:
            self._thresholds = dynamic_thresholds([img])
            self._window_start = t
        elif t - self._window_start >= self.window - 1e-9:
            self._thresholds = dynamic_thresholds(self._frames)
            self._frames = []
            self._window_start = t
        self._frames.append(img)
        low, high = self._thresholds
        if not low < high:
            return needle_edge_distance([], self.camera, self.roi_half_extent, timestamp=t)
        edges = detect_edges(img, low, high)
        hint = self.interior_hint(state)
        return needle_edge_distance(edges, self.camera, self.roi_half_extent, hint, timestamp=t)

    @staticmethod
    def interior_hint(state):
        # the suction gripper holds the garment well inside its contour
        return np.asarray(state.ee_pose, dtype=float)


def make_sensor(kind, thread, seed=0, **kwargs):
    if kind == "oracle":
        return OracleSensor(thread)
    if kind == "raster":
        return RasterSensor(thread, seed=seed, **kwargs)
    raise ValueError(f"unknown sensor {kind!r}")


def run_closed_loop(thread, traj, initial, slip=NO_SLIP, sensor=None, ctrl_cfg=None,
                    dt=DEFAULT_DT):
    """Sense, correct and replan every control cycle.

    Returns ``(final_state, stitches, events)``; ``events`` is a list of dicts
    recording every correction and every sensor dropout.
    """
    ctrl_cfg = ctrl_cfg or ControllerConfig()
    sensor = sensor or OracleSensor(thread)
    allowance = thread.spec.seam_allowance if ctrl_cfg.allowance is None else ctrl_cfg.allowance
    box = {"ctrl": ControlState(tol=ctrl_cfg.tol, desired_allowance=allowance, plan=traj),
           "dropout_since": None}
    events = []

    def cycle(state, tau):
        ctrl = box["ctrl"]
        ctrl = replace(ctrl, waypoint_index=int(np.searchsorted(traj.timestamps, tau, "right")))
        meas = sensor(state, state.t)
        if not meas.valid:
            if box["dropout_since"] is None:
                box["dropout_since"] = tau
            events.append({"t": state.t, "type": "dropout"})
            if tau - box["dropout_since"] > ctrl_cfg.dropout_timeout:
                raise TrackingLost(f"tracking lost: no edge measurement for more than "
                                   f"{ctrl_cfg.dropout_timeout} s at t={state.t:.3f}")
            box["ctrl"] = ctrl
            return ctrl.origin
        box["dropout_since"] = None
        theta = traj.theta_at(tau)
        cmd = compute_correction(meas, ctrl, theta)
        if cmd is not None:
            ctrl = apply_correction_and_replan(replace(ctrl, corr=True), cmd)
            events.append({"t": state.t, "type": "correction", "d": cmd.d, "theta": theta,
                           "x_correction": cmd.x_correction, "y_correction": cmd.y_correction,
                           "edge_dist": meas.edge_dist,
                           "needle_in_garment": list(state.needle_in_garment)})
        box["ctrl"] = ctrl
        return ctrl.origin

    final = execute(traj, initial, slip, dt, cycle_hook=cycle)
    return final, final.stitches, events
