"""Keyframe groups: runs of keyframes that keep enough tracks alive from the group start."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class KeyframeGroup:
    """A contiguous run of keyframes ``start .. start + len(members) - 1``.

    ``shared[n]`` is the number of tracks seen continuously from ``start`` up to
    ``members[n]``.
    """

    group_id: int
    start: int
    members: tuple
    shared: tuple

    @property
    def end(self):
        return self.members[-1]

    def __contains__(self, k):
        return self.start <= k <= self.end


def group_keyframes(track_sets, alpha=10):
    """Greedy partition of the keyframe sequence into groups.

    A group starts at keyframe i and keeps absorbing the next keyframe k while at
    least ``alpha`` tracks have been observed in every keyframe i..k. The start
    keyframe always belongs to its group, so isolated keyframes become singletons.
    """
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    sets = [frozenset(s) for s in track_sets]
    groups = []
    i = 0
    while i < len(sets):
        alive = sets[i]
        members, shared = [i], [len(alive)]
        k = i + 1
        while k < len(sets):
            nxt = alive & sets[k]
            if len(nxt) < alpha:
                break
            alive = nxt
            members.append(k)
            shared.append(len(alive))
            k += 1
        groups.append(KeyframeGroup(len(groups), i, tuple(members), tuple(shared)))
        i = k
    return groups


def group_of(groups):
    """Map keyframe index -> group id."""
    out = {}
    for g in groups:
        for k in g.members:
            out[k] = g.group_id
    return out
