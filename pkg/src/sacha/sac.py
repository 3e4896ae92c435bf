"""Discrete multi-agent soft actor-critic with a counterfactual baseline.

Replay experiences store joint positions rather than rendered feature maps:
observations are a deterministic function of (instance, positions), so they
are rebuilt exactly when a batch is assembled.
"""
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets
from .autodiff import Adam, ParameterSet, Tensor
from .errors import ContractError
from .gridworld import JointState


@dataclass
class SacConfig:
    gamma: float = 0.95
    alpha: float = 0.01
    tau: float = 0.005
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    batch_size: int = 64
    capacity: int = 50_000


@dataclass(eq=False)
class Experience:
    """One joint transition. ``builder`` renders observations for its instance."""

    builder: object
    positions: np.ndarray
    next_positions: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    done: bool
    hidden: np.ndarray
    next_hidden: np.ndarray

    @property
    def n_agents(self):
        return self.positions.shape[0]

    def observations(self, which="current"):
        pos = self.positions if which == "current" else self.next_positions
        feats, members, mask, graph = self.builder.build(JointState(pos))
        return feats, members, mask, graph.adjacency


class ReplayBuffer:
    """Bounded FIFO with uniform sampling."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ContractError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def append(self, exp):
        self._items.append(exp)

    def sample(self, batch_size, rng):
        if len(self._items) < batch_size:
            raise ContractError(f"buffer holds {len(self._items)} experiences, need {batch_size}")
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in idx]


class Group:
    """Experiences sharing one agent count, stacked into arrays."""

    def __init__(self, experiences):
        self.experiences = experiences
        m = experiences[0].n_agents
        cur = [e.observations("current") for e in experiences]
        nxt = [e.observations("next") for e in experiences]
        self.m = m
        self.b = len(experiences)
        self.feats = np.stack([c[0] for c in cur])
        self.members = np.stack([c[1] for c in cur])
        self.mask = np.stack([c[2] for c in cur])
        self.adj = np.stack([c[3] for c in cur])
        self.next_feats = np.stack([c[0] for c in nxt])
        self.next_members = np.stack([c[1] for c in nxt])
        self.next_mask = np.stack([c[2] for c in nxt])
        self.next_adj = np.stack([c[3] for c in nxt])
        self.actions = np.stack([e.actions for e in experiences]).astype(np.int64)
        self.rewards = np.stack([e.rewards for e in experiences]).astype(np.float64)
        self.done = np.array([e.done for e in experiences], dtype=bool)
        self.hidden = np.concatenate([e.hidden for e in experiences])
        self.next_hidden = np.concatenate([e.next_hidden for e in experiences])

    def rows(self, arr):
        """Flatten a (B, M, ...) array to (B*M, ...)."""
        return arr.reshape((self.b * self.m,) + arr.shape[2:])


def collate(experiences):
    if not experiences:
        raise ContractError("empty batch")
    by_m = {}
    for e in experiences:
        by_m.setdefault(e.n_agents, []).append(e)
    return [Group(by_m[m]) for m in sorted(by_m)]


def member_actions(actions, members):
    """(B, M, K) actions of each subgroup member, -1 in padding slots."""
    b = np.arange(actions.shape[0])[:, None, None]
    safe = np.where(members >= 0, members, 0)
    return np.where(members >= 0, actions[b, safe], -1)


class Learner:
    """Online and target parameters plus the two optimizers."""

    def __init__(self, net_cfg, sac_cfg, rng):
        self.net_cfg = net_cfg
        self.cfg = sac_cfg
        self.actor = nets.init_actor(net_cfg, rng)
        self.critic = nets.init_critic(net_cfg, rng)
        self.target_actor = self.actor.copy(requires_grad=False)
        self.target_critic = self.critic.copy(requires_grad=False)
        critic_side = ParameterSet(self.critic)
        head = ParameterSet()
        for k, v in self.actor.items():
            (critic_side if nets.is_encoder_param(k) else head)[k] = v
        self.critic_opt = Adam(critic_side, lr=sac_cfg.lr_critic)
        self.actor_opt = Adam(head, lr=sac_cfg.lr_actor)

    def all_params(self):
        out = ParameterSet(self.actor)
        out.update(self.critic)
        return out

    def state_arrays(self):
        """Every array needed to resume training, keyed by name."""
        out = {}
        for prefix, ps in (("online", self.actor), ("online", self.critic),
                           ("target", self.target_actor), ("target", self.target_critic)):
            for k, v in ps.items():
                out[f"{prefix}/{k}"] = v.data
        out.update(self.critic_opt.state_arrays("opt/critic"))
        out.update(self.actor_opt.state_arrays("opt/actor"))
        return out

    def load_state_arrays(self, arrays):
        for prefix, ps in (("online", self.actor), ("online", self.critic),
                           ("target", self.target_actor), ("target", self.target_critic)):
            ps.load_arrays({k: arrays[f"{prefix}/{k}"] for k in ps})
        self.critic_opt.load_state_arrays("opt/critic", arrays)
        self.actor_opt.load_state_arrays("opt/actor", arrays)


def counterfactual_baseline(pi, q, tol=1e-6):
    """sum_a pi(a) Q(a): the agent's own action marginalized, neighbours' fixed."""
    pi = np.asarray(pi, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=-1) - 1.0) > tol):
        raise ContractError("counterfactual_baseline: pi is not a probability distribution")
    return (pi * q).sum(axis=-1)


def soft_update(targets, online, tau):
    targets.soft_update_from(online, tau)
    return targets


def _target_values(learner, g, rng):
    """Soft state value of each agent's next observation under the target networks (no tape)."""
    cfg = learner.net_cfg
    alpha = learner.cfg.alpha
    with ad.no_tape():
        logits, _, enc = nets.actor_forward(
            learner.target_actor, cfg, g.next_feats, g.next_mask, Tensor(g.next_hidden), g.next_adj
        )
        logp = ad.log_softmax(logits).data
        pi = np.exp(logp)
        next_actions = nets.sample_actions(pi, rng).reshape(g.b, g.m)
        acts = g.rows(member_actions(next_actions, g.next_members))
        q = nets.critic_q(learner.target_critic, cfg, enc, acts, g.rows(g.next_mask)).data
    return (pi * (q - alpha * logp)).sum(axis=1)


def group_forward(learner, g, rng):
    """Online forward pass for one group.

    Returns a dict with the TD errors (Tensor), current-policy tensors and
    detached critic values, all over B*M rows.
    """
    cfg = learner.net_cfg
    sc = learner.cfg
    v_next = _target_values(learner, g, rng)
    not_done = np.repeat(~g.done, g.m).astype(np.float64)
    target = g.rows(g.rewards) + sc.gamma * not_done * v_next

    logits, _, enc = nets.actor_forward(
        learner.actor, cfg, g.feats, g.mask, Tensor(g.hidden), g.adj, detach_encoder=True
    )
    acts = g.rows(member_actions(g.actions, g.members))
    q_all = nets.critic_q(learner.critic, cfg, enc, acts, g.rows(g.mask))
    own = g.rows(g.actions)
    delta = ad.sub(ad.gather(q_all, own), target)
    return {"delta": delta, "logits": logits, "q": q_all.data, "own": own, "target": target}


def td_errors(learner, experiences, rng):
    """delta_i for every agent of every experience, in input order."""
    found = {}
    with ad.no_tape():
        for g in collate(experiences):
            d = group_forward(learner, g, rng)["delta"].data.reshape(g.b, g.m)
            for e, row in zip(g.experiences, d):
                found[id(e)] = row
    return [found[id(e)] for e in experiences]


def td_error(learner, exp, i, rng):
    return float(td_errors(learner, [exp], rng)[0][i])


def critic_loss_from_deltas(deltas):
    """Batch mean of per-experience mean squared TD errors."""
    if len(deltas) == 0:
        raise ContractError("critic_loss: empty batch")
    return float(np.mean([np.mean(np.square(d)) for d in deltas]))


def actor_surrogate(logits, q, alpha, weights):
    """Weighted sum over rows of sum_a pi(a) * stopgrad(Q(a) - b - alpha log pi(a)).

    Its gradient is the expectation over a ~ pi of score * (advantage - alpha log pi).
    """
    logp = ad.log_softmax(logits)
    pi = ad.exp(logp)
    pi_d = pi.data
    b = counterfactual_baseline(pi_d, q)
    adv = q - b[:, None] - alpha * logp.data
    return ad.sum(ad.mul(pi, adv * weights[:, None])), pi_d, logp.data, b


def losses(learner, experiences, rng, row_weights=None):
    """Critic loss and negated actor surrogate over a batch, on the active tape.

    ``row_weights`` optionally maps each group index to a (B*M,) weight
    vector for the actor surrogate; the default is 1 / (M(e) * batch).
    """
    groups = collate(experiences)
    n = len(experiences)
    lq = None
    actor_obj = None
    stats = {"entropy": [], "advantage": []}
    for gi, g in enumerate(groups):
        out = group_forward(learner, g, rng)
        delta = out["delta"]
        lq_g = ad.scale(ad.sum(ad.mul(delta, delta)), 1.0 / (g.m * n))
        lq = lq_g if lq is None else ad.add(lq, lq_g)
        w = np.full(g.b * g.m, 1.0 / (g.m * n)) if row_weights is None else row_weights[gi]
        surr, pi, logp, b = actor_surrogate(out["logits"], out["q"], learner.cfg.alpha, w)
        actor_obj = surr if actor_obj is None else ad.add(actor_obj, surr)
        stats["entropy"].append(-(pi * logp).sum(axis=1))
        stats["advantage"].append(out["q"][np.arange(g.b * g.m), out["own"]] - b)
    return lq, actor_obj, stats


def policy_gradient(learner, experiences, rng, row_weights=None):
    """Gradient of the actor surrogate w.r.t. the actor head, averaged over agents and batch."""
    head = learner.actor_opt.params
    head.zero_grad()
    with ad.Tape() as tape:
        _, obj, _ = losses(learner, experiences, rng, row_weights)
    ad.backward(tape, obj)
    grads = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in head.items()}
    head.zero_grad()
    return grads


def train_step(learner, buffer, rng):
    """One critic descent step, one actor ascent step, then the target update.

    Returns a diagnostics dict, or None (no mutation) when the buffer is
    smaller than a batch.
    """
    sc = learner.cfg
    if len(buffer) < sc.batch_size:
        return None
    batch = buffer.sample(sc.batch_size, rng)
    learner.critic_opt.params.zero_grad()
    learner.actor_opt.params.zero_grad()
    with ad.Tape() as tape:
        lq, obj, stats = losses(learner, batch, rng)
        # the two objectives touch disjoint parameter groups, so one pass serves both
        total = ad.sub(lq, obj)
    ad.backward(tape, total)
    learner.critic_opt.step()
    learner.actor_opt.step()
    soft_update(learner.target_actor, learner.actor, sc.tau)
    soft_update(learner.target_critic, learner.critic, sc.tau)
    return {
        "loss_q": float(lq.data),
        "entropy": float(np.mean(np.concatenate(stats["entropy"]))),
        "mean_advantage": float(np.mean(np.concatenate(stats["advantage"]))),
    }
