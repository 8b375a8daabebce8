import numpy as np
import pytest

from stackrl.geometry import DimensionMismatch, GridMap, grid_from_cells
from stackrl.shaping import (
    EmptyGoal, distance_sum, distance_transform, overlap_ratio,
    shaped_reward_dt, shaped_reward_overlap,
)


def cells(*pairs, w=10, h=8):
    return grid_from_cells(w, h, pairs)


def test_overlap_ratio_cases():
    goal = cells((0, 0), (1, 0), (2, 0), (3, 0), (4, 0))
    assert overlap_ratio(goal, goal) == 1.0
    assert overlap_ratio(cells((9, 7)), goal) == 0.0
    half = cells((0, 0), (1, 0), (2, 0), (3, 0), (4, 0), (5, 0),
                 (6, 0), (7, 0), (8, 0), (9, 0))
    assert overlap_ratio(goal, half) == 0.5
    with pytest.raises(EmptyGoal):
        overlap_ratio(goal, GridMap.empty(10, 8))
    with pytest.raises(DimensionMismatch):
        overlap_ratio(goal, GridMap.empty(9, 8))


def test_overlap_monotone_in_correct_cells():
    goal = cells((0, 0), (1, 0), (2, 0))
    state = cells((0, 0))
    more = cells((0, 0), (1, 0))
    assert overlap_ratio(more, goal) >= overlap_ratio(state, goal)


def test_shaped_reward_overlap():
    goal = cells((0, 0), (1, 0))
    none = GridMap.empty(10, 8)
    one = cells((0, 0))
    assert shaped_reward_overlap(none, one, goal) == 1.0
    assert shaped_reward_overlap(one, one, goal) == 0.0
    assert shaped_reward_overlap(one, none, goal) == -1.0
    # antisymmetric
    assert shaped_reward_overlap(one, none, goal) == \
        -shaped_reward_overlap(none, one, goal)


def test_distance_transform_manhattan():
    field = distance_transform(cells((0, 0)))
    assert field.values[3, 2] == 5  # cell (col 2, row 3)
    assert field.values[0, 0] == 0
    two = distance_transform(cells((0, 0), (3, 0)))
    assert two.values[0, 2] == 1
    with pytest.raises(EmptyGoal):
        distance_transform(GridMap.empty(4, 4))


def test_distance_transform_lipschitz_and_bruteforce():
    rng = np.random.default_rng(2)
    for _ in range(20):
        w, h = int(rng.integers(3, 12)), int(rng.integers(3, 12))
        arr = rng.random((h, w)) < 0.2
        if not arr.any():
            arr[0, 0] = True
        goal = GridMap(arr)
        field = distance_transform(goal)
        goal_cells = np.argwhere(arr)
        for r in range(h):
            for c in range(w):
                brute = min(abs(r - gr) + abs(c - gc) for gr, gc in goal_cells)
                assert field.values[r, c] == brute
        diff_r = np.abs(np.diff(field.values, axis=0))
        diff_c = np.abs(np.diff(field.values, axis=1))
        assert diff_r.max(initial=0) <= 1 and diff_c.max(initial=0) <= 1


def test_distance_sum_cases():
    goal = cells((0, 0))
    field = distance_transform(goal)
    assert distance_sum(cells((0, 0)), field) == 0
    assert distance_sum(cells((1, 0), (2, 0)), field) == 3
    assert distance_sum(GridMap.empty(10, 8), field) == 0
    with pytest.raises(DimensionMismatch):
        distance_sum(GridMap.empty(4, 4), field)


def test_shaped_reward_dt():
    field = distance_transform(cells((0, 0)))
    far = cells((5, 0))
    near = cells((3, 0))
    assert shaped_reward_dt(far, near, field) == 1.0
    assert shaped_reward_dt(near, near, field) == 0.0
    assert shaped_reward_dt(near, far, field) == -1.0
    assert shaped_reward_dt(near, far, field) == \
        -shaped_reward_dt(far, near, field)
