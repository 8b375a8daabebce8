"""Reward shaping for the stacking task: overlap ratio and distance transform.

Both schemes turn the change of a scalar progress measure between consecutive
states into a reward in {-1, 0, +1}.  The shaped value is added to the base
environment reward, never substituted for it.  State cells are taken to be
the union of the background and the in-flight block.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import DimensionMismatch, GridMap


class EmptyGoal(ValueError):
    """Goal map has no set cells."""


class ShapingMode(Enum):
    NONE = "none"
    OVERLAP_RATIO = "or"
    DISTANCE_TRANSFORM = "dt"


@dataclass(frozen=True)
class DistanceField:
    """Per-cell Manhattan distance to the nearest goal cell; 0 on the goal."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.int64).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


def overlap_ratio(state_cells: GridMap, goal: GridMap) -> float:
    """Intersection with the goal divided by the goal cell count."""
    if state_cells.cells.shape != goal.cells.shape:
        raise DimensionMismatch("state and goal grids differ in size")
    goal_count = goal.set_count()
    if goal_count == 0:
        raise EmptyGoal("overlap ratio needs a non-empty goal")
    return int((state_cells.cells & goal.cells).sum()) / goal_count


def shaped_reward_overlap(prev_state: GridMap, next_state: GridMap,
                          goal: GridMap) -> float:
    delta = overlap_ratio(next_state, goal) - overlap_ratio(prev_state, goal)
    if delta > 0:
        return 1.0
    if delta < 0:
        return -1.0
    return 0.0


def distance_transform(goal: GridMap) -> DistanceField:
    """Exact Manhattan distance to the goal set via multi-source BFS."""
    if goal.set_count() == 0:
        raise EmptyGoal("distance transform needs a non-empty goal")
    h, w = goal.cells.shape
    dist = np.full((h, w), -1, dtype=np.int64)
    queue: deque[tuple[int, int]] = deque()
    for r, c in zip(*np.nonzero(goal.cells)):
        dist[r, c] = 0
        queue.append((int(r), int(c)))
    while queue:
        r, c = queue.popleft()
        d = dist[r, c] + 1
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < h and 0 <= nc < w and dist[nr, nc] < 0:
                dist[nr, nc] = d
                queue.append((nr, nc))
    return DistanceField(dist)


def distance_sum(state_cells: GridMap, field: DistanceField) -> int:
    """Sum of field values over the set cells of the state."""
    if state_cells.cells.shape != field.values.shape:
        raise DimensionMismatch("state grid and distance field differ in size")
    return int(field.values[state_cells.cells].sum())


def shaped_reward_dt(prev_state: GridMap, next_state: GridMap,
                     field: DistanceField) -> float:
    delta = distance_sum(next_state, field) - distance_sum(prev_state, field)
    if delta < 0:
        return 1.0
    if delta > 0:
        return -1.0
    return 0.0
