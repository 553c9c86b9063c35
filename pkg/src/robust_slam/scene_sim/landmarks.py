"""Landmark populations: static walls, moving objects and relocated clusters."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .camera import in_frustum
from .trajectory import InvalidScenarioError, rotation_from_heading


class ScenarioValidationError(InvalidScenarioError):
    pass


class LandmarkKind(str, Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"
    TEMPORARILY_STATIC = "temporarily_static"


class ConstantSchedule:
    def __init__(self, point):
        self.point = np.asarray(point, dtype=float)

    def __call__(self, t):
        return self.point


class FollowMotion:
    """Object center that keeps a heading-relative offset from the camera plus a sinusoidal wander."""

    def __init__(self, trajectory, offset, amplitude, period, phase):
        self.trajectory = trajectory
        self.offset = np.asarray(offset, dtype=float)
        self.amplitude = np.asarray(amplitude, dtype=float)
        self.period = float(period)
        self.phase = float(phase)

    def __call__(self, t):
        R = rotation_from_heading(self.trajectory.heading(t))
        forward, left, up = R[:, 2], -R[:, 0], -R[:, 1]
        o = self.offset
        wander = self.amplitude * np.sin(2.0 * np.pi * t / self.period + self.phase)
        return self.trajectory.position(t) + o[0] * forward + o[1] * left + o[2] * up + wander


class OscillateMotion:
    def __init__(self, center, amplitude, period, phase):
        self.center = np.asarray(center, dtype=float)
        self.amplitude = np.asarray(amplitude, dtype=float)
        self.period = float(period)
        self.phase = float(phase)

    def __call__(self, t):
        return self.center + self.amplitude * np.sin(2.0 * np.pi * t / self.period + self.phase)


class RigidSchedule:
    """Point rigidly attached to a moving center."""

    def __init__(self, motion, offset):
        self.motion = motion
        self.offset = np.asarray(offset, dtype=float)

    def __call__(self, t):
        return self.motion(t) + self.offset


class RelocationSchedule:
    """Piecewise-constant center: ``centers[i]`` holds from ``switch_times[i-1]`` on."""

    def __init__(self, centers, switch_times, offset):
        if len(centers) != len(switch_times) + 1:
            raise ValueError("need one more center than switch times")
        self.centers = [np.asarray(c, dtype=float) for c in centers]
        self.switch_times = [float(s) for s in switch_times]
        self.offset = np.asarray(offset, dtype=float)

    def __call__(self, t):
        i = int(np.searchsorted(self.switch_times, t, side="right"))
        return self.centers[i] + self.offset


@dataclass
class Landmark:
    id: int
    kind: LandmarkKind
    schedule: object
    group: int = -1

    def position(self, t):
        return self.schedule(t)

    @property
    def relocation_times(self):
        return getattr(self.schedule, "switch_times", [])


def _wall_points(rng, n, layout, params):
    if n == 0:
        return np.zeros((0, 3))
    if layout == "wall_line":
        length = params.get("length", 6.0)
        x = rng.uniform(-4.0, length + 4.0, n)
        y = params.get("wall_distance", 6.0) + rng.uniform(-0.5, 0.5, n)
        z = rng.uniform(0.2, 2.8, n)
        return np.column_stack([x, y, z])
    if layout == "cylinder":
        ang = rng.uniform(0.0, 2.0 * np.pi, n)
        rad = params.get("wall_radius", 7.0) + rng.uniform(-0.5, 0.5, n)
        z = rng.uniform(0.2, 2.8, n)
        return np.column_stack([rad * np.cos(ang), rad * np.sin(ang), z])
    if layout == "box":
        x = rng.uniform(3.0, 8.0, n)
        y = rng.uniform(-3.0, 3.0, n)
        z = rng.uniform(0.0, 3.0, n)
        return np.column_stack([x, y, z])
    if layout == "e_room":
        # west/south/north walls dense, east wall (behind the object zones) sparse
        xmin, xmax = -3.0, params.get("east_wall", 7.5)
        ymin, ymax = -3.0, 7.0
        walls = rng.choice(4, size=n, p=[0.3, 0.27, 0.27, 0.16])
        pts = np.zeros((n, 3))
        u = rng.uniform(0.0, 1.0, n)
        jitter = rng.uniform(-0.3, 0.3, n)
        pts[:, 2] = rng.uniform(0.2, 2.8, n)
        for w, (fixed_axis, fixed, lo, hi) in enumerate([
                (0, xmin, ymin, ymax), (1, ymin, xmin, xmax), (1, ymax, xmin, xmax), (0, xmax, ymin, ymax)]):
            sel = walls == w
            pts[sel, fixed_axis] = fixed + jitter[sel]
            pts[sel, 1 - fixed_axis] = lo + (hi - lo) * u[sel]
        return pts
    raise InvalidScenarioError(f"unknown landmark layout {layout!r}")


def board_offsets(n, spacing=0.2, normal_axis=0):
    """Planar grid of ``n`` points centered on the origin, normal along ``normal_axis``."""
    cols = int(np.ceil(np.sqrt(n * 1.2)))
    rows = int(np.ceil(n / cols))
    pts = []
    for r in range(rows):
        for c in range(cols):
            if len(pts) == n:
                break
            a = (c - (cols - 1) / 2) * spacing
            b = (r - (rows - 1) / 2) * spacing
            p = np.zeros(3)
            p[1 if normal_axis == 0 else 0] = a
            p[2] = b
            pts.append(p)
    return np.array(pts).reshape(-1, 3)


def _dynamic_objects(rng, n, sampled, population):
    """Groups of up to ``points_per_object`` points on rigid moving objects."""
    per = population.points_per_object
    size = population.object_size
    n_obj = int(np.ceil(n / per))
    motions = []
    for _ in range(n_obj):
        if population.dynamic_motion == "follow":
            offset = [rng.uniform(2.5, 4.0), rng.uniform(-1.5, 1.5), rng.uniform(-0.3, 0.3)]
            direction = rng.normal(size=3) * np.array([1.0, 1.0, 0.3])
            amp = population.wander * direction / np.linalg.norm(direction)
            motions.append(FollowMotion(sampled.model, offset, amp, rng.uniform(2.0, 4.0),
                                        rng.uniform(0.0, 2.0 * np.pi)))
        elif population.dynamic_motion == "oscillate":
            t_mid = sampled.model.duration / 2
            anchor = sampled.model.position(t_mid)
            R = rotation_from_heading(sampled.model.heading(t_mid))
            center = anchor + R @ np.array([rng.uniform(-1.5, 1.5), 0.0, rng.uniform(3.0, 5.0)])
            direction = rng.normal(size=3) * np.array([1.0, 1.0, 0.3])
            amp = 2.0 * population.wander * direction / np.linalg.norm(direction)
            motions.append(OscillateMotion(center, amp, rng.uniform(2.0, 4.0),
                                           rng.uniform(0.0, 2.0 * np.pi)))
        else:
            raise InvalidScenarioError(f"unknown dynamic motion {population.dynamic_motion!r}")
    out = []
    for i in range(n):
        offset = rng.uniform(-size / 2, size / 2, 3)
        out.append((i // per, RigidSchedule(motions[i // per], offset)))
    return out


def _cluster_schedule(sampled, population, layout):
    """Centers and switch times for the temporarily static cluster."""
    meta = getattr(sampled.model, "meta", {})
    if layout == "e_room":
        centers = list(meta["zones"])
        switches = [0.5 * (a + b) for a, b in meta["spine_legs"]]
        return centers, switches, 0
    # generic: place in front of the first pose, relocate halfway through the run,
    # sideways by the configured shift
    model = sampled.model
    R0 = rotation_from_heading(model.heading(0.0))
    c0 = model.position(0.0) + R0 @ np.array([0.0, 0.0, population.cluster_distance])
    shift = R0[:, 0] * population.relocation_shift
    t_switch = population.relocation_time if population.relocation_time is not None else model.duration / 2
    normal = int(np.argmax(np.abs(R0[:2, 2])))
    return [c0, c0 + shift], [t_switch], normal


def validate_relocations(landmarks, sampled, camera):
    """Reject relocations that happen while any point of the cluster is in view."""
    times = sampled.times
    for lm in landmarks:
        for ts in lm.relocation_times:
            neighbors = list(np.nonzero(times < ts)[0][-1:]) + list(np.nonzero(times > ts)[0][:1])
            for k in neighbors:
                st = sampled.states[k]
                if in_frustum(st.pose, lm.position(times[k])[None, :], camera)[0]:
                    raise ScenarioValidationError(
                        f"landmark {lm.id} relocates at t={ts:.3f}s while visible from keyframe {k}")


def generate_landmarks(scenario, sampled, rng):
    pop = scenario.population
    layout = pop.layout
    lms = []
    next_id = 0
    for p in _wall_points(rng, pop.n_static, layout, scenario.trajectory_params):
        lms.append(Landmark(next_id, LandmarkKind.STATIC, ConstantSchedule(p)))
        next_id += 1
    for group, sched in _dynamic_objects(rng, pop.n_dynamic, sampled, pop):
        lms.append(Landmark(next_id, LandmarkKind.DYNAMIC, sched, group))
        next_id += 1
    if pop.n_temp_static > 0:
        centers, switches, normal = _cluster_schedule(sampled, pop, layout)
        for off in board_offsets(pop.n_temp_static, normal_axis=normal):
            lms.append(Landmark(next_id, LandmarkKind.TEMPORARILY_STATIC,
                                RelocationSchedule(centers, switches, off), 0))
            next_id += 1
    validate_relocations(lms, sampled, scenario.camera)
    return lms
