"""Outcome summaries for two-lane merge runs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import Trajectory

SETTLE_ALPHA = 0.1  # [m/s^2]
SETTLE_DELTA = math.radians(0.2)


@dataclass(frozen=True)
class MergeOutcome:
    kind: str  # "front", "rear" or "none"
    merger_final_y: float
    final_dx: float  # merger x minus other x at the end
    min_dx_alongside: float  # smallest |dx| over ticks with |dy| < lateral_band

    @property
    def merged(self) -> bool:
        return self.kind in ("front", "rear")


def merge_outcome(merger: Trajectory, other: Trajectory, target_lane: float = 1.85, lane_tol: float = 0.3,
                  lateral_band: float = 2.0) -> MergeOutcome:
    """Classify whether ``merger`` ended up ahead of or behind ``other`` in ``target_lane``.

    Both trajectories must start on the same tick.
    """
    a, b = merger.state_array(), other.state_array()
    n = min(len(a), len(b))
    a, b = a[:n], b[:n]
    dx, dy = a[:, 0] - b[:, 0], a[:, 1] - b[:, 1]
    near = np.abs(dy) < lateral_band
    min_dx = float(np.min(np.abs(dx[near]))) if near.any() else math.inf
    y_end = float(a[-1, 1])
    if abs(y_end - target_lane) >= lane_tol:
        kind = "none"
    else:
        kind = "front" if dx[-1] > 0 else "rear"
    return MergeOutcome(kind, y_end, float(dx[-1]), min_dx)


def active_mask(actions: np.ndarray, alpha_tol: float = SETTLE_ALPHA, delta_tol: float = SETTLE_DELTA) -> np.ndarray:
    """True on ticks where an ``(T, 2)`` action table is outside the rest band."""
    actions = np.asarray(actions, float).reshape(-1, 2)
    return (np.abs(actions[:, 0]) > alpha_tol) | (np.abs(actions[:, 1]) > delta_tol)


def settle_tick(action_tables, alpha_tol: float = SETTLE_ALPHA, delta_tol: float = SETTLE_DELTA) -> int:
    """First tick from which every agent's actions stay inside the rest band.

    0 means nobody ever maneuvered; ``T`` means someone was still active at the end.
    """
    last = -1
    for acts in action_tables:
        idx = np.flatnonzero(active_mask(acts, alpha_tol, delta_tol))
        if idx.size:
            last = max(last, int(idx[-1]))
    return last + 1


def settle_time(action_tables, dt: float, **kw) -> float:
    return settle_tick(action_tables, **kw) * dt
