"""TUM trajectory files: ``timestamp tx ty tz qx qy qz qw`` per line."""
from __future__ import annotations

import numpy as np

from .geometry import Pose


class TrajectoryFormatError(ValueError):
    pass


def write_tum(path, times, poses):
    with open(path, "w") as fh:
        for t, p in zip(times, poses):
            w, x, y, z = p.q
            vals = [t, *p.t, x, y, z, w]
            fh.write(" ".join(repr(float(v)) for v in vals) + "\n")


def read_tum(path):
    times, poses = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 8:
                raise TrajectoryFormatError(f"{path}:{lineno}: expected 8 columns, got {len(parts)}")
            try:
                v = [float(s) for s in parts]
            except ValueError as exc:
                raise TrajectoryFormatError(f"{path}:{lineno}: {exc}") from None
            times.append(v[0])
            poses.append(Pose(np.array([v[7], v[4], v[5], v[6]]), np.array(v[1:4])))
    return np.array(times), poses
