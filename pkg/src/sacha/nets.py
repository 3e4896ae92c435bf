"""Actor (encoder, attention, optional graph communication, decoder) and agent-centered critic.

All functions take the parameter set explicitly so the same code serves online
and target copies. Shapes use N for the number of (experience, agent) rows,
K for subgroup slots and d for the model width.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .errors import ContractError, DimensionError
from .gridworld import N_ACTIONS


@dataclass
class NetConfig:
    fov: int = 9
    k: int = 3
    conv_channels: tuple = (32, 64)
    width: int = 128
    heads: int = 4
    critic_width: int = 128
    comm: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if self.width % self.heads or self.critic_width % self.heads:
            raise ContractError(f"widths {self.width}/{self.critic_width} must be divisible by {self.heads} heads")

    def to_dict(self):
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _add_linear(ps, rng, name, n_in, n_out, dtype):
    ps[f"{name}.w"] = Tensor(_uniform(rng, (n_in, n_out), n_in, dtype), True, f"{name}.w")
    ps[f"{name}.b"] = Tensor(np.zeros(n_out, dtype=dtype), True, f"{name}.b")


def _add_mha(ps, rng, name, d, dtype):
    for k in ("wq", "wk", "wv", "wo"):
        ps[f"{name}.{k}"] = Tensor(_uniform(rng, (d, d), d, dtype), True, f"{name}.{k}")
    ps[f"{name}.bo"] = Tensor(np.zeros(d, dtype=dtype), True, f"{name}.bo")


def init_actor(cfg, rng):
    dt = np.dtype(cfg.dtype)
    ps = ParameterSet()
    c_in = 3
    for j, c_out in enumerate(cfg.conv_channels):
        name = f"actor.enc.conv{j}"
        ps[f"{name}.w"] = Tensor(_uniform(rng, (3, 3, c_in, c_out), 9 * c_in, dt), True, f"{name}.w")
        ps[f"{name}.b"] = Tensor(np.zeros(c_out, dtype=dt), True, f"{name}.b")
        c_in = c_out
    d = cfg.width
    _add_linear(ps, rng, "actor.enc.fc", cfg.fov * cfg.fov * c_in, d, dt)
    ps["actor.gru.w_ih"] = Tensor(_uniform(rng, (d, 3 * d), d, dt), True, "actor.gru.w_ih")
    ps["actor.gru.w_hh"] = Tensor(_uniform(rng, (d, 3 * d), d, dt), True, "actor.gru.w_hh")
    ps["actor.gru.b_ih"] = Tensor(np.zeros(3 * d, dtype=dt), True, "actor.gru.b_ih")
    ps["actor.gru.b_hh"] = Tensor(np.zeros(3 * d, dtype=dt), True, "actor.gru.b_hh")
    _add_mha(ps, rng, "actor.mha", d, dt)
    if cfg.comm:
        for j in range(2):
            ps[f"actor.gcn.w{j}"] = Tensor(_uniform(rng, (d, d), d, dt), True, f"actor.gcn.w{j}")
    _add_linear(ps, rng, "actor.dec.fc1", d, d, dt)
    _add_linear(ps, rng, "actor.dec.fc2", d, N_ACTIONS, dt)
    return ps


def init_critic(cfg, rng):
    dt = np.dtype(cfg.dtype)
    ps = ParameterSet()
    c = cfg.critic_width
    _add_linear(ps, rng, "critic.proj", cfg.width + N_ACTIONS, c, dt)
    _add_mha(ps, rng, "critic.mha", c, dt)
    _add_linear(ps, rng, "critic.dec.fc1", c, c, dt)
    _add_linear(ps, rng, "critic.dec.fc2", c, N_ACTIONS, dt)
    return ps


# encoder groups: trained through the critic loss; the actor head sees their output detached
ENCODER_PREFIXES = ("actor.enc.", "actor.gru.")


def is_encoder_param(name):
    return name.startswith(ENCODER_PREFIXES)


def encode(p, cfg, feats, mask, h):
    """Shared conv encoder on every valid slot plus a GRU step on the self slot.

    ``feats`` is (N, K, L, L, 3), ``mask`` (N, K) bool, ``h`` (N, d).
    Returns ``(encodings (N, K, d), h_next (N, d))``; slot 0 of the encodings
    is ``h_next`` and invalid slots are zero.
    """
    feats = np.asarray(feats)
    mask = np.asarray(mask, dtype=bool)
    n, k = mask.shape
    L = cfg.fov
    if feats.shape != (n, k, L, L, 3):
        raise DimensionError(f"encode: features {feats.shape} != {(n, k, L, L, 3)}")
    if not mask[:, 0].all():
        raise ContractError("encode: slot 0 must be valid for every row")
    rows = np.flatnonzero(mask.reshape(-1))
    x = Tensor(feats.reshape(n * k, L, L, 3)[rows].astype(cfg.dtype, copy=False))
    for j in range(len(cfg.conv_channels)):
        x = ad.relu(ad.conv2d(x, p[f"actor.enc.conv{j}.w"], p[f"actor.enc.conv{j}.b"]))
    x = ad.reshape(x, (len(rows), -1))
    e = ad.relu(ad.linear(x, p["actor.enc.fc.w"], p["actor.enc.fc.b"]))
    e = ad.reshape(scatter_rows(e, rows, n * k), (n, k, cfg.width))
    h_next = ad.gru_cell(e[:, 0, :], h, p["actor.gru.w_ih"], p["actor.gru.w_hh"], p["actor.gru.b_ih"], p["actor.gru.b_hh"])
    enc = ad.concat([ad.reshape(h_next, (n, 1, cfg.width)), e[:, 1:, :]], axis=1)
    return enc, h_next


def scatter_rows(x, rows, n):
    """Place the rows of ``x`` at ``rows`` of an otherwise zero (n, ...) tensor."""
    x = ad.as_tensor(x)
    rows = np.asarray(rows)
    out = np.zeros((n,) + x.shape[1:], dtype=x.dtype)
    out[rows] = x.data
    return ad._make(out, (x,), lambda g: (g[rows],))


def actor_attend(p, cfg, enc, mask):
    """Self slot queries all valid slots; the attended features form o_i."""
    return ad.multi_head_attention(
        enc[:, 0, :], enc, mask,
        p["actor.mha.wq"], p["actor.mha.wk"], p["actor.mha.wv"], p["actor.mha.wo"], p["actor.mha.bo"],
        cfg.heads,
    )


def normalized_adjacency(adj):
    """D^-1/2 (A + I) D^-1/2 for a (..., M, M) boolean adjacency."""
    adj = np.asarray(adj, dtype=bool)
    if not np.array_equal(adj, np.swapaxes(adj, -1, -2)):
        raise ContractError("communicate: adjacency must be symmetric")
    m = adj.shape[-1]
    if np.any(adj[..., np.arange(m), np.arange(m)]):
        raise ContractError("communicate: adjacency must have a zero diagonal")
    a = adj.astype(np.float64) + np.eye(m)
    dinv = 1.0 / np.sqrt(a.sum(axis=-1))
    return dinv[..., :, None] * a * dinv[..., None, :]


def communicate(p, o, adj):
    """Two graph-convolution layers with sigmoid activations.

    ``o`` is (B, M, d) and ``adj`` (B, M, M); returns (B, M, d).
    """
    norm = Tensor(normalized_adjacency(adj).astype(o.dtype))
    h = o
    for j in range(2):
        h = ad.sigmoid(ad.matmul(ad.matmul(norm, h), p[f"actor.gcn.w{j}"]))
    return h


def policy_logits(p, o):
    x = ad.relu(ad.linear(o, p["actor.dec.fc1.w"], p["actor.dec.fc1.b"]))
    return ad.linear(x, p["actor.dec.fc2.w"], p["actor.dec.fc2.b"])


def policy(p, o):
    """Action probabilities (N, 5)."""
    return ad.softmax(policy_logits(p, o), axis=-1)


def actor_forward(p, cfg, feats, mask, h, adj=None, detach_encoder=False):
    """Encoder through decoder logits for a (B, M) block of agents.

    ``feats`` is (B, M, K, L, L, 3); with communication enabled ``adj`` is
    (B, M, M). Returns ``(logits (B*M, 5), h_next (B*M, d), enc (B*M, K, d))``.
    """
    feats = np.asarray(feats)
    b, m = feats.shape[:2]
    mask = np.asarray(mask, dtype=bool).reshape(b * m, -1)
    enc, h_next = encode(p, cfg, feats.reshape((b * m,) + feats.shape[2:]), mask, h)
    head_in = ad.detach(enc) if detach_encoder else enc
    o = actor_attend(p, cfg, head_in, mask)
    if cfg.comm:
        if adj is None:
            raise ContractError("communication enabled but no adjacency given")
        o = ad.reshape(communicate(p, ad.reshape(o, (b, m, cfg.width)), adj), (b * m, cfg.width))
    return policy_logits(p, o), h_next, enc


def action_one_hot(actions, mask):
    """(N, K, 5) one-hot of neighbour actions; the self slot and invalid slots are zero."""
    actions = np.asarray(actions, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    need = mask.copy()
    need[:, 0] = False
    if np.any(need & (actions < 0)):
        raise ContractError("critic_q: missing action for a valid neighbour slot")
    out = np.zeros(actions.shape + (N_ACTIONS,))
    rows, slots = np.nonzero(need)
    out[rows, slots, actions[rows, slots]] = 1.0
    return out


def critic_q(p, cfg, enc, member_actions, mask):
    """Q-values of all five self-actions with subgroup members' actions held fixed.

    ``enc`` is (N, K, d), ``member_actions`` (N, K) with -1 where absent.
    """
    mask = np.asarray(mask, dtype=bool)
    onehot = Tensor(action_one_hot(member_actions, mask).astype(enc.dtype))
    x = ad.relu(ad.linear(ad.concat([enc, onehot], axis=-1), p["critic.proj.w"], p["critic.proj.b"]))
    att = ad.multi_head_attention(
        x[:, 0, :], x, mask,
        p["critic.mha.wq"], p["critic.mha.wk"], p["critic.mha.wv"], p["critic.mha.wo"], p["critic.mha.bo"],
        cfg.heads,
    )
    y = ad.relu(ad.linear(att, p["critic.dec.fc1.w"], p["critic.dec.fc1.b"]))
    return ad.linear(y, p["critic.dec.fc2.w"], p["critic.dec.fc2.b"])


def greedy_actions(probs, rng):
    """Argmax per row with uniform random tie-breaking."""
    probs = np.asarray(probs)
    best = probs == probs.max(axis=1, keepdims=True)
    noise = rng.random(probs.shape)
    return np.argmax(np.where(best, noise, -1.0), axis=1)


def sample_actions(probs, rng):
    probs = np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random((probs.shape[0], 1)) * cdf[:, -1:]
    return np.minimum((u >= cdf).sum(axis=1), probs.shape[1] - 1)


@dataclass
class Policy:
    """Decentralized execution of the actor for one episode (owns the GRU states)."""

    params: ParameterSet
    cfg: NetConfig
    hidden: np.ndarray = field(default=None)

    def reset(self, n_agents):
        self.hidden = np.zeros((n_agents, self.cfg.width), dtype=self.cfg.dtype)

    def act(self, feats, mask, adj, rng, greedy=False):
        """Return ``(actions, probs, h_before, h_after)`` for every agent."""
        h_before = self.hidden
        with ad.no_tape():
            logits, h_next, _ = actor_forward(
                self.params, self.cfg, feats[None], mask[None], Tensor(h_before), adj[None] if adj is not None else None
            )
            probs = ad.softmax(logits).data
        actions = greedy_actions(probs, rng) if greedy else sample_actions(probs, rng)
        self.hidden = h_next.data
        return actions, probs, h_before, h_next.data
