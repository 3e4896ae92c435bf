"""Per-agent distance-to-goal fields and heuristic reward shaping."""
import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError


@dataclass(frozen=True, eq=False)
class HeuristicMapSet:
    """Shortest path distances from every cell to each agent's goal.

    ``dist`` has shape (M, H, W) and holds ``inf`` for obstacles and for cells
    that cannot reach the goal. ``max_finite[i]`` is the largest finite
    distance in agent i's field, floored at 1.
    """

    map: object
    goals: tuple
    dist: np.ndarray
    max_finite: np.ndarray

    @property
    def n_agents(self):
        return self.dist.shape[0]

    @property
    def channel(self):
        """Observation channel: dist / max_finite in [0, 1]; unreachable cells read 1."""
        ch = self.dist / self.max_finite[:, None, None]
        ch[~np.isfinite(ch)] = 1.0
        return ch

    def to_json(self):
        return {
            "height": int(self.dist.shape[1]),
            "width": int(self.dist.shape[2]),
            "goals": [list(g) for g in self.goals],
            "max_finite": [int(v) for v in self.max_finite],
            "dist": [
                [[None if not np.isfinite(v) else int(v) for v in row] for row in field]
                for field in self.dist
            ],
        }

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def from_json(cls, data, grid_map=None):
        dist = np.array(
            [[[np.inf if v is None else float(v) for v in row] for row in field] for field in data["dist"]],
            dtype=np.float64,
        ).reshape(len(data["goals"]), data["height"], data["width"])
        goals = tuple(tuple(g) for g in data["goals"])
        return cls(grid_map, goals, dist, np.array(data["max_finite"], dtype=np.int64))


def distance_field(grid_map, goal):
    """Float distance field to ``goal`` with ``inf`` where unreachable."""
    d = kernels.bfs_distance_field(grid_map.cells, goal).astype(np.float64)
    d[d < 0] = np.inf
    return d


def compute_heuristic_maps(instance):
    """Backward search from each goal over the free-cell graph.

    All edges cost 1, so breadth-first order settles each cell at its first
    visit and no priority queue is needed.
    """
    return goal_heuristic_maps(instance.map, instance.goals)


def goal_heuristic_maps(grid, goals):
    """Heuristic maps for bare goal cells on ``grid``."""
    goals = tuple(tuple(int(v) for v in g) for g in goals)
    if not goals:
        raise ContractError("need at least one goal")
    for i, g in enumerate(goals):
        if not grid.in_bounds(g) or not grid.is_free(g):
            raise ContractError(f"agent {i}: goal {g} is not a free cell")
    dist = np.stack([distance_field(grid, g) for g in goals])
    finite = np.where(np.isfinite(dist), dist, 0.0)
    max_finite = np.maximum(finite.reshape(len(goals), -1).max(axis=1), 1).astype(np.int64)
    return HeuristicMapSet(grid, goals, dist, max_finite)


def normalized_h(maps, i, cell):
    """Negated normalized distance of ``cell`` to agent i's goal, in [-1, 0]."""
    d = maps.dist[i, cell[0], cell[1]]
    if not np.isfinite(d):
        return -1.0
    return -float(d) / float(maps.max_finite[i])


def normalized_h_batch(maps, positions):
    """``normalized_h`` for agent i at ``positions[i]``, for every agent."""
    positions = np.asarray(positions)
    idx = np.arange(maps.n_agents)
    d = maps.dist[idx, positions[:, 0], positions[:, 1]]
    out = -d / maps.max_finite
    out[~np.isfinite(d)] = -1.0
    return out


def check_shaping_params(lam, gamma):
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    if not 0.0 < gamma <= 1.0:
        raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")


def shape_reward(r, h_next, lam, gamma):
    """r + (1 - lam) * gamma * h_next."""
    check_shaping_params(lam, gamma)
    return r + (1.0 - lam) * gamma * h_next
