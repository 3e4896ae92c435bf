import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sacha.errors import ConfigError, ContractError
from sacha.gridworld import GridMap, MapfInstance
from sacha.heuristics import (
    HeuristicMapSet,
    compute_heuristic_maps,
    goal_heuristic_maps,
    normalized_h,
    normalized_h_batch,
    shape_reward,
)


def relaxation_oracle(grid, goal):
    """Shortest path lengths by repeated relaxation until nothing changes."""
    h, w = grid.shape
    dist = np.full((h, w), np.inf)
    dist[goal] = 0.0
    changed = True
    while changed:
        changed = False
        for r in range(h):
            for c in range(w):
                if grid[r, c]:
                    continue
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    nr, nc = r + dr, c + dc
                    if 0 <= nr < h and 0 <= nc < w and not grid[nr, nc] and dist[nr, nc] + 1 < dist[r, c]:
                        dist[r, c] = dist[nr, nc] + 1
                        changed = True
    return dist


def test_corridor():
    inst = MapfInstance(GridMap(np.zeros((1, 5), dtype=bool)), [(0, 0)], [(0, 4)])
    hm = compute_heuristic_maps(inst)
    assert hm.dist[0, 0].tolist() == [4, 3, 2, 1, 0]
    assert hm.max_finite.tolist() == [4]
    assert normalized_h(hm, 0, (0, 2)) == -0.5


def test_wall_detour():
    grid = GridMap.from_rows(["...", ".@.", "..."])
    inst = MapfInstance(grid, [(0, 0)], [(2, 2)])
    hm = compute_heuristic_maps(inst)
    assert hm.dist[0, 0, 0] == 4
    assert np.isinf(hm.dist[0, 1, 1])


def test_unreachable_cells_read_worst():
    grid = GridMap.from_rows(["..@.", "..@."])
    hm = goal_heuristic_maps(grid, [(0, 0)])
    assert np.isinf(hm.dist[0, 0, 3])
    assert normalized_h(hm, 0, (0, 3)) == -1.0
    assert hm.channel[0, 0, 3] == 1.0
    assert hm.channel[0, 0, 2] == 1.0  # obstacle


def test_single_cell_map_floors_denominator():
    hm = goal_heuristic_maps(GridMap(np.zeros((1, 1), dtype=bool)), [(0, 0)])
    assert hm.max_finite.tolist() == [1]
    assert normalized_h(hm, 0, (0, 0)) == 0.0


def test_goal_on_obstacle_rejected():
    with pytest.raises(ContractError):
        goal_heuristic_maps(GridMap.from_rows([".@"]), [(0, 1)])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), h=st.integers(1, 9), w=st.integers(1, 9))
def test_matches_oracle(seed, h, w):
    rng = np.random.default_rng(seed)
    grid = rng.random((h, w)) < 0.3
    free = np.argwhere(~grid)
    if len(free) == 0:
        return
    goal = tuple(free[rng.integers(len(free))])
    hm = goal_heuristic_maps(GridMap(grid), [goal])
    assert np.array_equal(hm.dist[0], relaxation_oracle(grid, goal))


def test_backends_agree_on_fields(backend, rng):
    grid = rng.random((15, 15)) < 0.3
    grid[0, 0] = False
    hm = goal_heuristic_maps(GridMap(grid), [(0, 0)])
    assert np.array_equal(hm.dist[0], relaxation_oracle(grid, (0, 0)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_normalized_range_and_batch(seed):
    rng = np.random.default_rng(seed)
    grid = rng.random((8, 8)) < 0.3
    free = np.argwhere(~grid)
    if len(free) < 2:
        return
    idx = rng.choice(len(free), 2, replace=False)
    hm = goal_heuristic_maps(GridMap(grid), [tuple(free[idx[0]]), tuple(free[idx[1]])])
    pos = free[rng.choice(len(free), 2, replace=False)]
    batch = normalized_h_batch(hm, pos)
    for i in range(2):
        v = normalized_h(hm, i, tuple(pos[i]))
        assert -1.0 <= v <= 0.0
        assert batch[i] == v
    assert ((hm.channel >= 0) & (hm.channel <= 1)).all()


def test_shaping_formula():
    assert shape_reward(-0.075, -0.5, 0.1, 0.95) == -0.075 + (1 - 0.1) * 0.95 * -0.5
    assert shape_reward(3.0, 0.0, 0.1, 0.95) == 3.0
    assert shape_reward(-0.5, -1.0, 1.0, 0.95) == -0.5


def test_shaping_parameter_checks():
    with pytest.raises(ConfigError):
        shape_reward(0.0, 0.0, 1.5, 0.95)
    with pytest.raises(ConfigError):
        shape_reward(0.0, 0.0, 0.1, 0.0)


def test_json_round_trip(tmp_path):
    grid = GridMap.from_rows(["..@.", "..@."])
    hm = goal_heuristic_maps(grid, [(0, 0), (1, 3)])
    path = tmp_path / "h.json"
    hm.dump(path)
    back = HeuristicMapSet.from_json(json.loads(path.read_text()), grid)
    assert np.array_equal(back.dist, hm.dist)
    assert np.array_equal(back.max_finite, hm.max_finite)
    assert back.goals == hm.goals
