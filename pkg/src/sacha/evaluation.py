"""Evaluation protocol: random benchmark instances, greedy rollouts and metrics."""
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, GenerationError
from .gridworld import MapfInstance
from .trainer import place_agents, run_episode


def generate_instances(grid_map, n_agents, count, seed, retries=100):
    """``count`` random instances with distinct starts/goals and per-agent reachability."""
    if n_agents < 1 or count < 0:
        raise ContractError("n_agents must be >= 1 and count >= 0")
    free = int((~grid_map.cells).sum())
    if free < n_agents:
        raise GenerationError(f"map has {free} free cells, need at least {n_agents}")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        for _ in range(retries):
            placed = place_agents(grid_map.cells, n_agents, rng, retries)
            if placed is not None:
                out.append(MapfInstance(grid_map, *placed))
                break
        else:
            raise GenerationError(f"instance {k}: no feasible placement of {n_agents} agents after {retries} tries")
    return out


@dataclass
class InstanceResult:
    success: bool
    steps: list
    runtime: float


@dataclass
class EvalReport:
    max_steps: int
    results: list = field(default_factory=list)

    @property
    def success_rate(self):
        return sum(r.success for r in self.results) / len(self.results)

    @property
    def average_step(self):
        """Mean over instances of the mean per-agent step (max_steps for failed instances)."""
        return float(np.mean([np.mean(r.steps) for r in self.results]))

    def to_json(self):
        return {
            "max_steps": self.max_steps,
            "instances": len(self.results),
            "success_rate": self.success_rate,
            "average_step": self.average_step,
            "results": [
                {"success": r.success, "steps": [int(s) for s in r.steps], "runtime": r.runtime}
                for r in self.results
            ],
        }


def score(arrivals, successes, max_steps):
    """Build a report from raw per-instance outcomes."""
    report = EvalReport(max_steps)
    for arrival, ok in zip(arrivals, successes):
        steps = [int(t) for t in arrival] if ok else [max_steps] * len(arrival)
        report.results.append(InstanceResult(bool(ok), steps, 0.0))
    return report


def evaluate(policy, instances, max_steps=256, seed=0, greedy=True):
    """Greedy rollouts (random tie-break) of every instance."""
    if len(instances) == 0:
        raise ContractError("no instances")
    rng = np.random.default_rng(seed)
    report = EvalReport(max_steps)
    for inst in instances:
        t0 = time.perf_counter()
        res = run_episode(inst, policy, max_steps, rng, mode="eval" if greedy else "train")
        steps = [int(t) for t in res.arrival] if res.success else [max_steps] * inst.n_agents
        report.results.append(InstanceResult(res.success, steps, time.perf_counter() - t0))
    return report
