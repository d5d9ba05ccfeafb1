"""Fixed-timestep planar workcell: garment, gripper, sewing machine, slip.

The needle sits at the world origin. The robot holds the garment with a
vacuum gripper and moves it underneath; stitches are recorded in the garment
frame so later slip cannot move thread that is already in the fabric.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import geometry
from .errors import ValidationError
from .trajectory import DEFAULT_V_MAX
from .validation import check_nonnegative, check_positive

DEFAULT_DT = 0.01
SLIP_MODES = ("none", "constant_drift", "proportional_lag")
_PHASE_EPS = 1e-9


@dataclass(frozen=True)
class SewingMachineState:
    presser_foot: str = "up"
    running: bool = False
    stitch_rate: float = 10.0
    stitch_length: float = 3.0
    phase: float = 0.0

    def __post_init__(self):
        if self.presser_foot not in ("up", "down"):
            raise ValidationError(f"presser_foot must be 'up' or 'down', got {self.presser_foot!r}")
        check_positive(self.stitch_rate, "stitch_rate")

    @property
    def sewing(self):
        return self.running and self.presser_foot == "down"


@dataclass(frozen=True)
class SlipModel:
    mode: str = "none"
    drift_velocity: tuple = (0.0, 0.0)
    lag_factor: float = 0.0
    noise_sd: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.mode not in SLIP_MODES:
            raise ValidationError(f"slip mode must be one of {SLIP_MODES}, got {self.mode!r}")
        if not 0.0 <= self.lag_factor < 1.0:
            raise ValidationError(f"lag_factor must lie in [0, 1), got {self.lag_factor}")
        check_nonnegative(self.noise_sd, "noise_sd")
        object.__setattr__(self, "drift_velocity", tuple(float(v) for v in self.drift_velocity))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {"mode", "drift_velocity", "lag_factor", "noise_sd", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown slip model keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {"mode": self.mode, "drift_velocity": list(self.drift_velocity),
                "lag_factor": self.lag_factor, "noise_sd": self.noise_sd, "seed": self.seed}


NO_SLIP = SlipModel()


@dataclass(frozen=True)
class StitchRecord:
    points: tuple = ()
    times: tuple = ()

    def __len__(self):
        return len(self.points)

    def as_array(self):
        return np.array(self.points, dtype=float).reshape(-1, 2)

    def appended(self, new_points, new_times):
        return StitchRecord(self.points + tuple(new_points), self.times + tuple(new_times))

    def to_dict(self):
        return {"points": [list(p) for p in self.points], "times": list(self.times)}


@dataclass(frozen=True)
class WorkcellState:
    garment_pose: tuple
    ee_pose: tuple
    grip_offset: tuple
    machine: SewingMachineState = field(default_factory=SewingMachineState)
    stitches: StitchRecord = field(default_factory=StitchRecord)
    t: float = 0.0
    nominal_pose: Optional[tuple] = None
    rng: Optional[np.random.Generator] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.garment_pose):
            raise ValidationError(f"garment pose is not finite: {self.garment_pose}")

    @property
    def needle_in_garment(self):
        """Garment-frame coordinates of the needle (world origin)."""
        x, y, th = self.garment_pose
        c, s = math.cos(th), math.sin(th)
        return (-(c * x + s * y), -(-s * x + c * y))

    def to_dict(self):
        return {"garment_pose": list(self.garment_pose), "ee_pose": list(self.ee_pose),
                "grip_offset": list(self.grip_offset), "t": self.t,
                "machine": {"presser_foot": self.machine.presser_foot,
                            "running": self.machine.running,
                            "stitch_rate": self.machine.stitch_rate,
                            "stitch_length": self.machine.stitch_length,
                            "phase": self.machine.phase},
                "stitch_count": len(self.stitches)}


def step(state, ee_velocity_cmd, dt, slip=NO_SLIP, v_max=DEFAULT_V_MAX):
    """Advance the workcell by ``dt`` seconds under an end-effector velocity command."""
    if not dt > 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    vx, vy = float(ee_velocity_cmd[0]), float(ee_velocity_cmd[1])
    if math.hypot(vx, vy) > v_max * (1 + 1e-9):
        raise ValidationError(
            f"velocity command {math.hypot(vx, vy):.3f} mm/s exceeds v_max {v_max} mm/s")
    dx, dy = vx * dt, vy * dt
    ex, ey = state.ee_pose
    gx, gy, gth = state.garment_pose

    if slip.mode == "none":
        gdx, gdy = dx, dy
    elif slip.mode == "constant_drift":
        gdx = dx - slip.drift_velocity[0] * dt
        gdy = dy - slip.drift_velocity[1] * dt
    else:
        gdx, gdy = dx * (1.0 - slip.lag_factor), dy * (1.0 - slip.lag_factor)
    rng = state.rng
    if slip.mode != "none" and slip.noise_sd > 0:
        if rng is None:
            rng = np.random.default_rng(slip.seed)
        wander = rng.normal(0.0, slip.noise_sd * math.sqrt(dt), 2)
        gdx += float(wander[0])
        gdy += float(wander[1])

    new = replace(state, ee_pose=(ex + dx, ey + dy), garment_pose=(gx + gdx, gy + gdy, gth),
                  t=state.t + dt, rng=rng)

    machine = state.machine
    if machine.sewing:
        phase = machine.phase + machine.stitch_rate * dt
        if phase >= 1.0 - _PHASE_EPS:
            n0 = state.needle_in_garment
            n1 = new.needle_in_garment
            pts, times = [], []
            span = machine.stitch_rate * dt
            while phase >= 1.0 - _PHASE_EPS:
                phase -= 1.0
                f = min(max(1.0 - phase / span, 0.0), 1.0)
                pts.append((n0[0] + f * (n1[0] - n0[0]), n0[1] + f * (n1[1] - n0[1])))
                times.append(state.t + f * dt)
            if abs(phase) < _PHASE_EPS:
                phase = 0.0
            new = replace(new, stitches=state.stitches.appended(pts, times))
        new = replace(new, machine=replace(machine, phase=phase))
    return new


def place_garment(thread, pose_error=(0.0, 0.0, 0.0), stitch_rate=10.0, seed=None):
    """Put the first seam point under the needle, then perturb by ``pose_error``.

    The rotation part of ``pose_error`` turns the garment about the needle, so
    it leaves the initial edge distance unchanged.
    """
    dx, dy, dth = (float(v) for v in pose_error)
    s0 = thread.seam[0]
    nominal = (-float(s0[0]), -float(s0[1]), 0.0)
    c, s = math.cos(dth), math.sin(dth)
    px = c * nominal[0] - s * nominal[1] + dx
    py = s * nominal[0] + c * nominal[1] + dy
    pose = (px, py, dth)
    grip = tuple(float(v) for v in thread.centroid)
    ee = geometry.transform_points([grip], pose)[0]
    machine = SewingMachineState(stitch_rate=stitch_rate, stitch_length=thread.spec.stitch_length)
    rng = np.random.default_rng(seed) if seed is not None else None
    return WorkcellState(pose, (float(ee[0]), float(ee[1])), grip, machine,
                         nominal_pose=nominal, rng=rng)


def execute(traj, initial, slip=NO_SLIP, dt=DEFAULT_DT, cycle_hook=None):
    """Follow ``traj`` at a fixed control rate; shared by open and closed loop.

    ``cycle_hook(state, tau)`` runs at the start of every cycle and may return a
    needle-path offset added to the plan (the closed-loop origin shift).
    """
    if traj is None or len(traj) == 0:
        raise ValidationError("empty trajectory")
    dt = check_positive(dt, "dt")
    v_max = traj.limits.v_max
    nominal = initial.nominal_pose or initial.garment_pose
    c, s = math.cos(nominal[2]), math.sin(nominal[2])
    T = traj.duration

    state = replace(initial, machine=replace(initial.machine, presser_foot="down",
                                             running=True, phase=0.0))
    if state.rng is None and slip.mode != "none" and slip.noise_sd > 0:
        state = replace(state, rng=np.random.default_rng(slip.seed))
    p_cmd = traj.position_at(0.0)
    n_steps = max(1, math.ceil(T / dt - 1e-9))
    for k in range(n_steps):
        tau = k * dt
        h = min(dt, T - tau)
        if h <= 0:
            break
        offset = cycle_hook(state, tau) if cycle_hook is not None else None
        target = traj.position_at(tau + h)
        if offset is not None and (offset[0] != 0.0 or offset[1] != 0.0):
            target = target + np.asarray(offset)
        vx = (target[0] - p_cmd[0]) / h
        vy = (target[1] - p_cmd[1]) / h
        speed = math.hypot(vx, vy)
        if speed > v_max:
            vx, vy = vx * v_max / speed, vy * v_max / speed
        p_cmd = (p_cmd[0] + vx * h, p_cmd[1] + vy * h)
        # garment moves opposite to the needle's path across it
        ee_cmd = (-(c * vx - s * vy), -(s * vx + c * vy))
        state = step(state, ee_cmd, h, slip, v_max)
    state = replace(state, machine=replace(state.machine, presser_foot="up", running=False))
    return state


def run_open_loop(traj, initial, slip=NO_SLIP, dt=DEFAULT_DT):
    """Replay the planned trajectory with no feedback; returns (state, stitches)."""
    final = execute(traj, initial, slip, dt)
    return final, final.stitches
