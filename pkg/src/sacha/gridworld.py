"""Grid MAPF simulator with partial observability.

Coordinates are ``(row, col)`` with row 0 at the top. The five actions move
an agent one cell on the 4-connected grid or keep it in place.
"""
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError

MOVE_REWARD = -0.075
WAIT_ON_GOAL_REWARD = 0.0
WAIT_OFF_GOAL_REWARD = -0.075
COLLISION_REWARD = -0.5
GOAL_REWARD = 3.0

BASE_REWARDS = (MOVE_REWARD, WAIT_ON_GOAL_REWARD, COLLISION_REWARD, GOAL_REWARD)
GOAL_REWARD_MODES = ("entry", "finish")


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    WAIT = 4


DELTAS = np.array([(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)], dtype=np.int64)
N_ACTIONS = len(Action)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridMap:
    """Static obstacle grid; ``cells[r, c]`` is True for an obstacle.

    ``glyphs`` optionally keeps the source rows of a benchmark file so the map
    can be written back unchanged.
    """

    cells: np.ndarray
    glyphs: tuple = field(default=None)

    def __post_init__(self):
        cells = _frozen(self.cells, bool)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ContractError(f"grid must be a non-empty 2-D array, got shape {cells.shape}")
        object.__setattr__(self, "cells", cells)
        if self.glyphs is not None:
            object.__setattr__(self, "glyphs", tuple(self.glyphs))

    @property
    def height(self):
        return self.cells.shape[0]

    @property
    def width(self):
        return self.cells.shape[1]

    @classmethod
    def from_rows(cls, rows, obstacle="@"):
        return cls(np.array([[ch in obstacle for ch in row] for row in rows], dtype=bool))

    def in_bounds(self, cell):
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def is_free(self, cell):
        return self.in_bounds(cell) and not self.cells[cell[0], cell[1]]

    def free_cells(self):
        """Free cells as an (n, 2) array in row-major order."""
        return np.argwhere(~self.cells)

    def __eq__(self, other):
        return isinstance(other, GridMap) and np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return hash((self.cells.shape, self.cells.tobytes()))


@dataclass(frozen=True, eq=False)
class MapfInstance:
    """A map plus one start and one goal per agent, validated on construction."""

    map: GridMap
    starts: tuple
    goals: tuple

    def __post_init__(self):
        starts = tuple((int(r), int(c)) for r, c in self.starts)
        goals = tuple((int(r), int(c)) for r, c in self.goals)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "goals", goals)
        if len(starts) == 0 or len(starts) != len(goals):
            raise ContractError(f"need M >= 1 starts and goals of equal length, got {len(starts)} and {len(goals)}")
        for i, (s, g) in enumerate(zip(starts, goals)):
            if not self.map.is_free(s):
                raise ContractError(f"agent {i}: start {s} is not a free cell")
            if not self.map.is_free(g):
                raise ContractError(f"agent {i}: goal {g} is not a free cell")
        if len(set(starts)) != len(starts):
            raise ContractError("starts are not pairwise distinct")
        if len(set(goals)) != len(goals):
            raise ContractError("goals are not pairwise distinct")
        for i, (s, g) in enumerate(zip(starts, goals)):
            if kernels.bfs_distance_field(self.map.cells, g)[s] < 0:
                raise ContractError(f"agent {i}: goal {g} unreachable from start {s}")

    @property
    def n_agents(self):
        return len(self.starts)

    def initial_state(self):
        return JointState(np.array(self.starts, dtype=np.int64), 0)

    def __eq__(self, other):
        return (
            isinstance(other, MapfInstance)
            and self.map == other.map
            and self.starts == other.starts
            and self.goals == other.goals
        )

    def __hash__(self):
        return hash((self.map, self.starts, self.goals))


@dataclass(frozen=True, eq=False)
class JointState:
    positions: np.ndarray
    t: int = 0

    def __post_init__(self):
        pos = _frozen(self.positions, np.int64).reshape(-1, 2)
        object.__setattr__(self, "positions", pos)

    @property
    def n_agents(self):
        return self.positions.shape[0]

    def __eq__(self, other):
        return isinstance(other, JointState) and self.t == other.t and np.array_equal(self.positions, other.positions)


@dataclass(frozen=True)
class StepOutcome:
    next_state: JointState
    base_rewards: np.ndarray
    collided: np.ndarray
    all_done: bool
    arrival_times: list


def _check_state(state, instance):
    pos = state.positions
    if pos.shape[0] != instance.n_agents:
        raise ContractError(f"state has {pos.shape[0]} agents, instance has {instance.n_agents}")
    grid = instance.map
    for i, p in enumerate(pos):
        if not grid.is_free(p):
            raise ContractError(f"agent {i} at {tuple(p)} is not on a free cell")
    if len({tuple(p) for p in pos}) != len(pos):
        raise ContractError("agent positions are not pairwise distinct")


def on_goal_mask(positions, goals):
    return np.all(np.asarray(positions) == np.asarray(goals), axis=1)


def step(state, actions, instance, arrival=None, goal_reward="entry"):
    """Advance the joint state by one timestep.

    ``arrival`` is the previous list of arrival times (None for agents off
    their goal). When omitted, agents already on their goal are treated as
    having arrived at ``state.t``.

    ``goal_reward`` selects when the goal reward is paid: "entry" pays an
    agent whenever it steps onto its goal; "finish" pays every agent on the
    step that brings the last agent home, and nothing before.
    """
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    if actions.shape[0] != state.n_agents:
        raise ContractError(f"got {actions.shape[0]} actions for {state.n_agents} agents")
    if np.any((actions < 0) | (actions >= N_ACTIONS)):
        raise ContractError(f"actions must lie in 0..{N_ACTIONS - 1}")
    _check_state(state, instance)

    goals = np.array(instance.goals, dtype=np.int64)
    prev = state.positions
    nxt, collided = kernels.resolve_moves(instance.map.cells, prev, actions)

    was_on = on_goal_mask(prev, goals)
    now_on = on_goal_mask(nxt, goals)
    rewards = np.full(state.n_agents, MOVE_REWARD)
    waiting = actions == Action.WAIT
    rewards[waiting & now_on] = WAIT_ON_GOAL_REWARD
    rewards[waiting & ~now_on] = WAIT_OFF_GOAL_REWARD
    rewards[collided] = COLLISION_REWARD
    all_done = bool(now_on.all())
    if goal_reward == "entry":
        rewards[now_on & ~was_on & ~collided] = GOAL_REWARD
    elif goal_reward == "finish":
        if all_done:
            rewards[:] = GOAL_REWARD
    else:
        raise ConfigError(f"goal_reward must be one of {GOAL_REWARD_MODES}, got {goal_reward!r}")

    if arrival is None:
        arrival = [state.t if on else None for on in was_on]
    new_arrival = []
    for i in range(state.n_agents):
        if not now_on[i]:
            new_arrival.append(None)
        elif was_on[i] and arrival[i] is not None:
            new_arrival.append(arrival[i])
        else:
            new_arrival.append(state.t + 1)

    return StepOutcome(
        next_state=JointState(nxt, state.t + 1),
        base_rewards=rewards,
        collided=collided,
        all_done=all_done,
        arrival_times=new_arrival,
    )


@dataclass(frozen=True)
class ObservationGraph:
    adjacency: np.ndarray
    t: int = 0


def _check_fov(L):
    if not isinstance(L, (int, np.integer)) or L < 3 or L % 2 == 0:
        raise ConfigError(f"FOV size must be an odd integer >= 3, got {L!r}")


def observation_graph(state, L):
    """Agents are adjacent when each lies inside the other's L x L window."""
    _check_fov(L)
    pos = state.positions
    radius = (L - 1) // 2
    cheb = np.abs(pos[:, None, :] - pos[None, :, :]).max(axis=2)
    adj = cheb <= radius
    np.fill_diagonal(adj, False)
    return ObservationGraph(adj, state.t)


def subgroup(graph, i, positions, K):
    """Agent ``i`` followed by its nearest ``K - 1`` FOV neighbours.

    Nearness is Manhattan distance; ties go to the lower agent index.
    """
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    positions = np.asarray(positions)
    nbrs = np.flatnonzero(graph.adjacency[i])
    if nbrs.size == 0 or K == 1:
        return [int(i)]
    d = np.abs(positions[nbrs] - positions[i]).sum(axis=1)
    order = np.lexsort((nbrs, d))
    return [int(i)] + [int(j) for j in nbrs[order][: K - 1]]


@dataclass(frozen=True)
class Observation:
    """K stacked L x L x 3 feature maps for one agent.

    Channels are obstacles, agent positions, and the member's normalized
    distance-to-goal. ``member_ids`` holds -1 for padding slots.
    """

    feature_maps: np.ndarray
    member_ids: np.ndarray
    valid_mask: np.ndarray
    fov_size: int = field(default=9)


class ObservationBuilder:
    """Batched observation construction for one instance.

    Padded copies of the obstacle grid and of every agent's heuristic channel
    are made once; windows are then cut with fancy indexing.
    """

    def __init__(self, heuristics, L=9, K=3):
        _check_fov(L)
        if K < 1:
            raise ConfigError(f"K must be >= 1, got {K}")
        self.map = heuristics.map
        self.L = L
        self.K = K
        self.radius = r = (L - 1) // 2
        grid = self.map.cells
        self._obst = np.pad(grid.astype(np.float64), r, constant_values=1.0)
        channel = np.asarray(heuristics.channel, dtype=np.float64)
        self._heur = np.pad(channel, ((0, 0), (r, r), (r, r)), constant_values=1.0)

    def build(self, state, graph=None):
        """Return ``(features (M,K,L,L,3), member_ids (M,K), mask (M,K), graph)``."""
        feats, members, adj = kernels.render_observations(self._obst, self._heur, state.positions, self.K, self.L)
        if graph is None:
            graph = ObservationGraph(adj, state.t)
        return feats, members, members >= 0, graph


def observe(state, i, heuristics, graph, K, L):
    """Observation of agent ``i`` (single-agent convenience over ObservationBuilder)."""
    if not 0 <= i < state.n_agents:
        raise ContractError(f"agent index {i} out of range for {state.n_agents} agents")
    feats, members, mask, _ = ObservationBuilder(heuristics, L, K).build(state, graph)
    return Observation(feats[i], members[i], mask[i], L)


class Episode:
    """Single-writer episode driver tracking time, arrivals and termination."""

    def __init__(self, instance, horizon, goal_reward="entry"):
        if horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {horizon}")
        if goal_reward not in GOAL_REWARD_MODES:
            raise ConfigError(f"goal_reward must be one of {GOAL_REWARD_MODES}, got {goal_reward!r}")
        self.goal_reward = goal_reward
        self.instance = instance
        self.horizon = horizon
        self.state = instance.initial_state()
        goals = np.array(instance.goals)
        self.arrival = [0 if on else None for on in on_goal_mask(self.state.positions, goals)]
        self.all_done = all(a is not None for a in self.arrival)

    @property
    def finished(self):
        return self.all_done or self.state.t >= self.horizon

    def step(self, actions):
        if self.finished:
            raise ContractError("episode already finished")
        out = step(self.state, actions, self.instance, self.arrival, self.goal_reward)
        self.state = out.next_state
        self.arrival = out.arrival_times
        self.all_done = out.all_done
        return out
