"""Smooth camera trajectories sampled at keyframe instants.

Camera convention: z forward, x right, y down. A heading angle psi points the
optical axis along (cos psi, sin psi, 0) in a z-up world.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose
from ..types import KeyframeState


class InvalidScenarioError(ValueError):
    pass


def rotation_from_heading(psi):
    c, s = np.cos(psi), np.sin(psi)
    forward = np.array([c, s, 0.0])
    right = np.array([s, -c, 0.0])
    down = np.array([0.0, 0.0, -1.0])
    return np.column_stack([right, down, forward])


class Trajectory:
    duration: float

    def position(self, t):
        raise NotImplementedError

    def velocity(self, t):
        raise NotImplementedError

    def heading(self, t):
        raise NotImplementedError

    def pose(self, t) -> Pose:
        return Pose.from_rt(rotation_from_heading(self.heading(t)), self.position(t))


@dataclass
class HoverTrajectory(Trajectory):
    duration: float
    center: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.5]))
    yaw: float = 0.0

    def position(self, t):
        return np.array(self.center, dtype=float)

    def velocity(self, t):
        return np.zeros(3)

    def heading(self, t):
        return self.yaw


@dataclass
class CircleTrajectory(Trajectory):
    """One full revolution facing outward, with a gentle vertical bob."""

    duration: float
    radius: float = 2.0
    height: float = 1.5
    bob: float = 0.15
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def _theta(self, t):
        return 2.0 * np.pi * t / self.duration

    def position(self, t):
        th = self._theta(t)
        return np.array([self.center[0] + self.radius * np.cos(th),
                         self.center[1] + self.radius * np.sin(th),
                         self.height + self.bob * np.sin(2.0 * th)])

    def velocity(self, t):
        th = self._theta(t)
        w = 2.0 * np.pi / self.duration
        return np.array([-self.radius * w * np.sin(th),
                         self.radius * w * np.cos(th),
                         2.0 * w * self.bob * np.cos(2.0 * th)])

    def heading(self, t):
        return self._theta(t)


@dataclass
class LineTrajectory(Trajectory):
    """Sideways translation along +x while looking toward +y, with lateral/vertical wobble."""

    duration: float
    length: float = 6.0
    height: float = 1.5
    sway: float = 0.2
    bob: float = 0.1
    yaw_wobble: float = 0.1

    def position(self, t):
        u = t / self.duration
        return np.array([self.length * u,
                         self.sway * np.sin(2.0 * np.pi * u),
                         self.height + self.bob * np.sin(4.0 * np.pi * u)])

    def velocity(self, t):
        u = t / self.duration
        du = 1.0 / self.duration
        return np.array([self.length * du,
                         self.sway * 2.0 * np.pi * du * np.cos(2.0 * np.pi * u),
                         self.bob * 4.0 * np.pi * du * np.cos(4.0 * np.pi * u)])

    def heading(self, t):
        return 0.5 * np.pi + self.yaw_wobble * np.sin(2.0 * np.pi * t / self.duration)


def _quintic(tau):
    """Rest-to-rest blend s(tau) and ds/dtau with zero velocity and acceleration at both ends."""
    tau = min(max(tau, 0.0), 1.0)
    s = tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)
    ds = 30.0 * tau**2 * (1.0 - tau) ** 2
    return s, ds


@dataclass
class Segment:
    t0: float
    t1: float
    p0: np.ndarray
    p1: np.ndarray
    psi0: float
    psi1: float
    label: str = ""


@dataclass
class WaypointTrajectory(Trajectory):
    """Stop-and-go path: each segment either translates or rotates in place, quintic-blended."""

    segments: list
    meta: dict = field(default_factory=dict)

    @property
    def duration(self):
        return self.segments[-1].t1

    def _segment(self, t):
        for seg in self.segments:
            if t <= seg.t1:
                return seg
        return self.segments[-1]

    def position(self, t):
        seg = self._segment(t)
        s, _ = _quintic((t - seg.t0) / (seg.t1 - seg.t0))
        return seg.p0 + s * (seg.p1 - seg.p0)

    def velocity(self, t):
        seg = self._segment(t)
        _, ds = _quintic((t - seg.t0) / (seg.t1 - seg.t0))
        return ds / (seg.t1 - seg.t0) * (seg.p1 - seg.p0)

    def heading(self, t):
        seg = self._segment(t)
        s, _ = _quintic((t - seg.t0) / (seg.t1 - seg.t0))
        return seg.psi0 + s * (seg.psi1 - seg.psi0)


def e_shape_trajectory(bar_length=4.0, spacing=2.0, height=1.5, speed=1.0,
                       turn_rate=1.25, dwell=1.0, zone_distance=2.5):
    """Camera path along the letter E, facing +x at each of the three bar ends.

    ``meta`` carries the vertex positions, the object zone in front of each vertex,
    and the time span of the spine legs during which a relocation is invisible.
    """
    if bar_length <= 0.0 or spacing <= 0.0:
        raise InvalidScenarioError("e_shape needs positive bar length and spacing")
    z = height
    segs = []
    t = 0.0

    def move(p0, p1, psi, label):
        nonlocal t
        p0 = np.array([p0[0], p0[1], z])
        p1 = np.array([p1[0], p1[1], z])
        dur = 1.875 * np.linalg.norm(p1 - p0) / speed
        segs.append(Segment(t, t + dur, p0, p1, psi, psi, label))
        t += dur

    def turn(p, psi0, psi1, label):
        nonlocal t
        p = np.array([p[0], p[1], z])
        dur = max(abs(psi1 - psi0) / turn_rate, 0.5)
        segs.append(Segment(t, t + dur, p, p, psi0, psi1, label))
        t += dur

    def hold(p, psi, label):
        nonlocal t
        p = np.array([p[0], p[1], z])
        segs.append(Segment(t, t + dwell, p, p, psi, psi, label))
        t += dwell

    L, s = bar_length, spacing
    bars = [2 * s, s, 0.0]
    psi = 0.0
    spine_legs = []
    vertex_times = []
    for b, y in enumerate(bars):
        move((0.0, y), (L, y), psi, f"out{b}")
        t_arrive = t
        hold((L, y), psi, f"vertex{b}")
        vertex_times.append((t_arrive, t))
        turn((L, y), psi, psi + np.pi, f"turn_back{b}")
        psi += np.pi
        move((L, y), (0.0, y), psi, f"back{b}")
        if b < len(bars) - 1:
            turn((0.0, y), psi, psi + 0.5 * np.pi, f"turn_down{b}")
            psi += 0.5 * np.pi
            t_leg = t
            move((0.0, y), (0.0, bars[b + 1]), psi, f"spine{b}")
            spine_legs.append((t_leg, t))
            turn((0.0, bars[b + 1]), psi, psi + 0.5 * np.pi, f"turn_out{b}")
            psi += 0.5 * np.pi
    vertices = [np.array([L, y, z]) for y in bars]
    zones = [np.array([L + zone_distance, y, z]) for y in bars]
    meta = {"vertices": vertices, "zones": zones, "vertex_times": vertex_times,
            "spine_legs": spine_legs}
    return WaypointTrajectory(segs, meta)


@dataclass
class SampledTrajectory:
    times: np.ndarray
    states: list
    model: Trajectory


def generate_trajectory(preset, params=None, keyframe_rate=10.0, biases=None):
    """Build a preset trajectory and sample ground-truth keyframe states."""
    params = dict(params or {})
    if keyframe_rate <= 0.0:
        raise InvalidScenarioError("keyframe rate must be positive")
    if preset == "e_shape":
        model = e_shape_trajectory(**params)
    else:
        duration = float(params.pop("duration", 20.0))
        if duration <= 0.0:
            raise InvalidScenarioError("duration must be positive")
        if preset == "static_hover":
            model = HoverTrajectory(duration, **params)
        elif preset == "loop":
            model = CircleTrajectory(duration, **params)
            if model.radius <= 0.0:
                raise InvalidScenarioError("loop radius must be positive")
        elif preset == "follow_line":
            model = LineTrajectory(duration, **params)
            if model.length <= 0.0:
                raise InvalidScenarioError("line length must be positive")
        else:
            raise InvalidScenarioError(f"unknown trajectory preset {preset!r}")
    n = int(np.floor(model.duration * keyframe_rate + 1e-9)) + 1
    if n < 2:
        raise InvalidScenarioError("trajectory shorter than two keyframes")
    times = np.arange(n) / keyframe_rate
    bias_a, bias_g = (np.zeros(3), np.zeros(3)) if biases is None else biases
    states = [KeyframeState(model.pose(t), model.velocity(t), np.array(bias_a, float),
                            np.array(bias_g, float), float(t)) for t in times]
    return SampledTrajectory(times, states, model)
