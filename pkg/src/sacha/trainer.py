"""Curriculum training: random instance generation, rollouts and the SAC loop."""
import json
import logging
import os
import time
from collections import deque
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml
from scipy import ndimage

from . import autodiff as ad
from .errors import ConfigError, GenerationError
from .gridworld import GOAL_REWARD_MODES, Episode, GridMap, MapfInstance, ObservationBuilder
from .heuristics import check_shaping_params, compute_heuristic_maps, normalized_h_batch, shape_reward
from .nets import NetConfig, Policy
from .sac import Experience, Learner, ReplayBuffer, SacConfig, train_step

log = logging.getLogger(__name__)

FULL_SCALE_CAPS = {"max_side": 100, "max_agents": 72}


@dataclass
class TrainConfig:
    # shaping and objective
    lam: float = 0.1
    gamma: float = 0.95
    alpha: float = 0.01
    tau: float = 0.005
    # observation
    k: int = 3
    fov: int = 9
    # networks
    conv_channels: tuple = (32, 64)
    width: int = 128
    heads: int = 4
    critic_width: int = 128
    comm: bool = False
    dtype: str = "float64"
    # optimisation
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    batch_size: int = 64
    capacity: int = 50_000
    warmup: int = 1_000
    total_steps: int = 100_000
    # curriculum
    start_side: int = 10
    start_agents: int = 2
    max_side: int = 40
    max_agents: int = 16
    curriculum: bool = True
    threshold: float = 0.9
    window: int = 100
    horizon: int = 256
    goal_reward: str = "finish"  # "entry" pays every goal entry, "finish" pays all agents at completion
    density: tuple = (0.0, 0.33, 0.5)  # triangular (low, mode, high)
    # run control
    seed: int = 0
    stop_on_success: bool = False
    checkpoint_every: int = 0
    log_every: int = 1

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.density = tuple(float(v) for v in self.density)
        check_shaping_params(self.lam, self.gamma)
        lo, mode, hi = self.density
        if not 0.0 <= lo <= mode <= hi < 1.0:
            raise ConfigError(f"density must satisfy 0 <= low <= mode <= high < 1, got {self.density}")
        if self.start_side > self.max_side or self.start_agents > self.max_agents:
            raise ConfigError("start task exceeds the configured caps")
        if self.fov % 2 == 0 or self.fov < 3:
            raise ConfigError(f"fov must be an odd integer >= 3, got {self.fov}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.goal_reward not in GOAL_REWARD_MODES:
            raise ConfigError(f"goal_reward must be one of {GOAL_REWARD_MODES}")

    def net_config(self):
        return NetConfig(
            fov=self.fov, k=self.k, conv_channels=self.conv_channels, width=self.width,
            heads=self.heads, critic_width=self.critic_width, comm=self.comm, dtype=self.dtype,
        )

    def sac_config(self):
        return SacConfig(
            gamma=self.gamma, alpha=self.alpha, tau=self.tau, lr_actor=self.lr_actor,
            lr_critic=self.lr_critic, batch_size=self.batch_size, capacity=self.capacity,
        )

    def to_dict(self):
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["density"] = list(self.density)
        return d


def load_config(path):
    """Read a YAML (or JSON) mapping of TrainConfig keys. ``full_scale_caps: true`` selects 100/72 caps."""
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    raw = dict(raw)
    if raw.pop("full_scale_caps", False):
        raw.update(FULL_SCALE_CAPS)
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    return TrainConfig(**raw)


# environment generation


def sample_density(rng, low=0.0, mode=0.33, high=0.5):
    if high == low:
        return low
    return float(rng.triangular(low, mode, high))


def place_agents(grid, n_agents, rng, retries=100):
    """Distinct starts and distinct goals with each goal in its start's component.

    Returns ``(starts, goals)`` or None when the retry budget runs out.
    """
    free = np.argwhere(~grid)
    if len(free) < n_agents:
        return None
    labels, _ = ndimage.label(~grid)
    starts = free[rng.choice(len(free), n_agents, replace=False)]
    goals = []
    used = set()
    budget = retries
    for s in starts:
        while True:
            g = free[rng.integers(len(free))]
            key = (int(g[0]), int(g[1]))
            if key not in used and labels[key] == labels[s[0], s[1]]:
                used.add(key)
                goals.append(key)
                break
            budget -= 1
            if budget < 0:
                return None
    return [tuple(int(v) for v in s) for s in starts], goals


@dataclass(frozen=True)
class CurriculumStage:
    side: int
    agents: int
    pool: tuple
    grow: str = "agents"

    @classmethod
    def initial(cls, cfg):
        task = (cfg.start_side, cfg.start_agents)
        return cls(cfg.start_side, cfg.start_agents, (task,))


def sample_environment(stage, rng, density=(0.0, 0.33, 0.5), task=None, max_maps=100, retries=100):
    """Random square map from the stage pool (or the given ``task``) with solvable placements."""
    side, n_agents = task if task is not None else stage.pool[rng.integers(len(stage.pool))]
    for _ in range(max_maps):
        grid = rng.random((side, side)) < sample_density(rng, *density)
        placed = place_agents(grid, n_agents, rng, retries)
        if placed is not None:
            return MapfInstance(GridMap(grid), *placed)
    raise GenerationError(f"no feasible placement of {n_agents} agents on {side}x{side} maps after {max_maps} maps")


def curriculum_advance(successes, stage, cfg):
    """Add the next harder task once the window success rate reaches the threshold.

    Tasks alternate between doubling the agent count and growing the map side
    by 10; a step that would exceed a cap falls back to the other kind, and
    when both exceed their caps the stage is returned unchanged.
    """
    if len(successes) < cfg.window or float(np.mean(successes)) < cfg.threshold:
        return stage
    grow_agents = (stage.side, stage.agents * 2)
    grow_side = (stage.side + 10, stage.agents)
    order = [("agents", grow_agents), ("side", grow_side)]
    if stage.grow == "side":
        order.reverse()
    for kind, (side, agents) in order:
        if side <= cfg.max_side and agents <= cfg.max_agents:
            nxt = "side" if kind == "agents" else "agents"
            return CurriculumStage(side, agents, stage.pool + ((side, agents),), nxt)
    return stage


# rollouts


@dataclass
class EpisodeResult:
    instance: object
    trajectory: list
    arrival: list
    success: bool
    steps: int
    trace: list = field(default_factory=list)


def run_episode(instance, policy, horizon, rng, lam=0.1, gamma=0.95, mode="train", on_step=None, heuristics=None,
                goal_reward="entry"):
    """Roll out one episode.

    ``mode`` is "train" (sample actions) or "eval" (greedy with random
    tie-break). Every reward is shaped before it is stored; ``on_step`` is
    called with each Experience as it is produced.
    """
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    cfg = policy.cfg
    hm = heuristics if heuristics is not None else compute_heuristic_maps(instance)
    builder = ObservationBuilder(hm, cfg.fov, cfg.k)
    ep = Episode(instance, horizon, goal_reward)
    policy.reset(instance.n_agents)
    trajectory, trace = [], []
    while not ep.finished:
        prev = ep.state.positions
        feats, _, mask, graph = builder.build(ep.state)
        actions, _, h0, h1 = policy.act(feats, mask, graph.adjacency if cfg.comm else None, rng, greedy=(mode == "eval"))
        out = ep.step(actions)
        nxt = out.next_state.positions
        rewards = shape_reward(out.base_rewards, normalized_h_batch(hm, nxt), lam, gamma)
        exp = Experience(builder, prev, nxt, np.asarray(actions), rewards, out.all_done,
                         h0.astype(np.float32), h1.astype(np.float32))
        trajectory.append(exp)
        trace.append({
            "t": int(ep.state.t),
            "positions": prev.tolist(),
            "actions": [int(a) for a in actions],
            "next_positions": nxt.tolist(),
            "base_rewards": out.base_rewards.tolist(),
            "rewards": rewards.tolist(),
            "collided": out.collided.tolist(),
        })
        if on_step is not None:
            on_step(exp)
    return EpisodeResult(instance, trajectory, list(ep.arrival), ep.all_done, ep.state.t, trace)


class Trainer:
    """Single-process training driver; one train step per environment step after warmup."""

    def __init__(self, cfg, out_dir=None):
        self.cfg = cfg
        seeds = np.random.SeedSequence(cfg.seed).spawn(4)
        self.init_rng, self.env_rng, self.act_rng, self.train_rng = (np.random.default_rng(s) for s in seeds)
        self.learner = Learner(cfg.net_config(), cfg.sac_config(), self.init_rng)
        self.buffer = ReplayBuffer(cfg.capacity)
        self.stage = CurriculumStage.initial(cfg)
        self.successes = deque(maxlen=cfg.window)
        self.avg_steps = deque(maxlen=cfg.window)
        self.env_steps = 0
        self.train_steps = 0
        self.episodes = 0
        self.out_dir = out_dir
        self.records = []
        self._log_fh = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "config.json"), "w") as fh:
                json.dump(cfg.to_dict(), fh, indent=2)
            self._log_fh = open(os.path.join(out_dir, "train_log.jsonl"), "w")

    def success_rate(self):
        return float(np.mean(self.successes)) if self.successes else None

    def average_step(self):
        return float(np.mean(self.avg_steps)) if self.avg_steps else None

    def policy(self):
        return Policy(self.learner.actor, self.learner.net_cfg)

    def _after_step(self, exp):
        self.buffer.append(exp)
        self.env_steps += 1
        if self.env_steps > self.cfg.warmup:
            diag = train_step(self.learner, self.buffer, self.train_rng)
            if diag is not None:
                self.train_steps += 1
                self._log(diag)
        if self.cfg.checkpoint_every and self.out_dir and self.env_steps % self.cfg.checkpoint_every == 0:
            self.save(os.path.join(self.out_dir, f"ckpt_{self.env_steps:07d}.ckpt"))
        if self.env_steps >= self._limit:
            raise _StopRollout

    def _log(self, diag):
        if self.train_steps % self.cfg.log_every:
            return
        sr = self.success_rate()
        rec = {
            "step": self.env_steps,
            "train_step": self.train_steps,
            "loss_q": diag["loss_q"],
            "entropy": diag["entropy"],
            "mean_advantage": diag["mean_advantage"],
            "success_rate": sr,
            "average_step": self.average_step(),
            "episodes": self.episodes,
            "side": self.stage.side,
            "agents": self.stage.agents,
        }
        self.records.append(rec)
        if self._log_fh is not None:
            self._log_fh.write(json.dumps(rec) + "\n")

    def solved(self):
        return len(self.successes) == self.cfg.window and self.success_rate() >= self.cfg.threshold

    def run(self, total_steps=None, time_limit=None):
        """Train until ``total_steps`` environment steps (or success, if configured)."""
        cfg = self.cfg
        self._limit = self.env_steps + (cfg.total_steps if total_steps is None else total_steps)
        start = time.monotonic()
        policy = self.policy()
        while self.env_steps < self._limit:
            inst = sample_environment(self.stage, self.env_rng, cfg.density)
            try:
                res = run_episode(inst, policy, cfg.horizon, self.act_rng, cfg.lam, cfg.gamma,
                                  mode="train", on_step=self._after_step, goal_reward=cfg.goal_reward)
            except _StopRollout:
                break
            self.episodes += 1
            self.successes.append(res.success)
            self.avg_steps.append(float(np.mean(res.arrival)) if res.success else float(cfg.horizon))
            if cfg.curriculum:
                nxt = curriculum_advance(self.successes, self.stage, cfg)
                if nxt is not self.stage:
                    log.info("curriculum: added task %s after %d episodes", nxt.pool[-1], self.episodes)
                    self.stage = nxt
                    self.successes.clear()
                    self.avg_steps.clear()
            elif cfg.stop_on_success and self.solved():
                break
            if time_limit is not None and time.monotonic() - start > time_limit:
                break
        if self._log_fh is not None:
            self._log_fh.flush()
        return {
            "env_steps": self.env_steps,
            "train_steps": self.train_steps,
            "episodes": self.episodes,
            "success_rate": self.success_rate(),
            "solved": self.solved(),
            "pool": [list(t) for t in self.stage.pool],
            "seconds": time.monotonic() - start,
        }

    def save(self, path):
        ad.save_checkpoint(path, self.learner.state_arrays(), {
            "net": self.learner.net_cfg.to_dict(),
            "train": self.cfg.to_dict(),
            "env_steps": self.env_steps,
        })

    def close(self):
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None


class _StopRollout(Exception):
    pass


def load_policy(path):
    """Actor parameters and network config from a training checkpoint."""
    arrays, meta = ad.load_checkpoint(path)
    cfg = NetConfig(**meta["net"])
    params = ad.ParameterSet()
    for k, v in arrays.items():
        if k.startswith("online/actor."):
            name = k[len("online/"):]
            params[name] = ad.Tensor(v, name=name)
    return Policy(params, cfg)
