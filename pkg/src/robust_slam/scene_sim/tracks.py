"""Run-length track segmentation over per-frame landmark observations."""
from __future__ import annotations

from dataclasses import dataclass, field, replace


@dataclass
class SimTrack:
    track_id: int
    landmark_id: int
    frames: list = field(default_factory=list)


def track_features(frames):
    """Split observations into tracks that never span a visibility gap.

    ``frames[f]`` lists the observations of keyframe ``f`` keyed by landmark id.
    Returns ``(tracks, relabeled)`` where ``relabeled[f]`` holds the same
    observations with ``feature_id`` replaced by the track id.
    """
    tracks = []
    active = {}
    relabeled = []
    for f, obs in enumerate(frames):
        now = {}
        out = []
        for o in sorted(obs, key=lambda o: o.feature_id):
            lid = o.feature_id
            tid = active.get(lid)
            if tid is None:
                tid = len(tracks)
                tracks.append(SimTrack(tid, lid))
            tracks[tid].frames.append(f)
            now[lid] = tid
            out.append(replace(o, frame_id=f, feature_id=tid))
        active = now
        relabeled.append(out)
    return tracks, relabeled
