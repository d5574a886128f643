"""Closed-interval arithmetic on time axes.

Occupancy intervals are treated as closed sets: two intervals that merely
touch at an endpoint are considered to overlap.  All comparisons carry a
small absolute slack so that times assembled from many float additions
still compare the way their exact values would.
"""

from __future__ import annotations

import math

# Slack for float noise in times built from sums of sample steps.  Must be
# far below the sample step (0.1 s) and the base tick.
TIME_EPS = 1e-9

Interval = tuple[float, float]


def overlaps(a0: float, a1: float, b0: float, b1: float, eps: float = TIME_EPS) -> bool:
    """True if closed intervals [a0,a1] and [b0,b1] share at least a point."""
    return max(a0, b0) <= min(a1, b1) + eps


def merge(intervals: list[Interval], eps: float = TIME_EPS) -> list[Interval]:
    """Union of closed intervals, sorted and with touching pieces fused."""
    if not intervals:
        return []
    pieces = sorted(intervals)
    out = [pieces[0]]
    for s, e in pieces[1:]:
        ls, le = out[-1]
        if s <= le + eps:
            if e > le:
                out[-1] = (ls, e)
        else:
            out.append((s, e))
    return out

def complement(occupied: list[Interval], horizon: float = math.inf) -> list[Interval]:
    """Maximal gaps of [0, horizon] not covered by ``occupied`` (pre-merged).

    The returned pieces are the closures of the open gaps between closed
    occupancy intervals; membership tests against occupancy must therefore
    stay strict at shared endpoints (see :func:`overlaps`).
    """
    free: list[Interval] = []
    cursor = 0.0
    for s, e in occupied:
        if s > cursor:
            free.append((cursor, s))
        cursor = max(cursor, e)
        if cursor >= horizon:
            return free
    if cursor < horizon:
        free.append((cursor, horizon))
    return free


def find_piece(pieces: list[Interval], t: float, eps: float = TIME_EPS) -> int:
    """Index of the piece containing time ``t``, or -1."""
    for i, (s, e) in enumerate(pieces):
        if s - eps <= t <= e + eps:
            return i
    return -1


def clear_of(occupied: list[Interval], w0: float, w1: float, eps: float = TIME_EPS) -> bool:
    """True if window [w0, w1] touches none of the (merged) occupancy intervals."""
    for s, e in occupied:
        if s > w1 + eps:
            break
        if overlaps(w0, w1, s, e, eps):
            return False
    return True
