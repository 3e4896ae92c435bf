"""Exact policy-gradient identities on tiny enumerable multi-agent MDPs.

Agents share a tabular softmax policy: agent i in state s acts from
``softmax(theta[F[s, i]])``. Values are finite-horizon and time-indexed, so
every quantity below is an exact sum over (t, s, joint action).

The "global" gradient of agent i is the independent-learner gradient that
treats the other agents as part of the environment,
E[grad log pi_i(a_i|s) Q(s, a)]. The "local" gradient replaces Q with the
advantage against a counterfactual baseline b(s, a_-i). Both are averaged
over agents, which is the update obtained by averaging locally updated
copies of the shared parameters (and equals grad J / M).
"""
import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

MAX_STATES = 50
MAX_JOINT = 125
MAX_HORIZON = 6
MAX_AGENTS = 3
MAX_ACTIONS = 5


@dataclass
class TinyMdp:
    """Deterministic finite-horizon MDP with a shared team reward.

    ``transitions`` and ``rewards`` have shape (S, A**M) and are indexed by the
    joint action in ``itertools.product`` order. ``features`` (S, M) selects
    the policy-table row each agent reads in each state.
    """

    n_agents: int
    n_actions: int
    transitions: np.ndarray
    rewards: np.ndarray
    features: np.ndarray
    init: np.ndarray
    gamma: float = 0.9
    horizon: int = 4

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.int64).reshape(-1, self.n_agents)
        self.init = np.asarray(self.init, dtype=np.float64)

    @property
    def n_states(self):
        return self.transitions.shape[0]

    @property
    def n_features(self):
        return int(self.features.max()) + 1

    def joint_actions(self):
        return np.array(list(itertools.product(range(self.n_actions), repeat=self.n_agents)), dtype=np.int64)


def check_enumerable(mdp):
    s, m, a = mdp.n_states, mdp.n_agents, mdp.n_actions
    if not (1 <= m <= MAX_AGENTS and 1 <= a <= MAX_ACTIONS and a ** m <= MAX_JOINT):
        raise ContractError(f"not enumerable: {m} agents with {a} actions")
    if not 1 <= s <= MAX_STATES:
        raise ContractError(f"not enumerable: {s} states")
    if not 1 <= mdp.horizon <= MAX_HORIZON:
        raise ContractError(f"not enumerable: horizon {mdp.horizon}")
    n_joint = a ** m
    if mdp.transitions.shape != (s, n_joint) or mdp.rewards.shape != (s, n_joint):
        raise ContractError("transition and reward tables must have shape (states, joint actions)")
    if mdp.transitions.min() < 0 or mdp.transitions.max() >= s:
        raise ContractError("transition table points outside the state list")
    if mdp.features.shape != (s, m) or mdp.features.min() < 0:
        raise ContractError("features must be non-negative with shape (states, agents)")
    if mdp.init.shape != (s,) or abs(mdp.init.sum() - 1.0) > 1e-12 or mdp.init.min() < 0:
        raise ContractError("init must be a distribution over states")


def random_tiny_mdp(rng, n_agents=2, n_states=3, n_actions=3, horizon=4, n_features=None, gamma=0.9):
    n_joint = n_actions ** n_agents
    n_features = n_states * n_agents if n_features is None else n_features
    return TinyMdp(
        n_agents=n_agents,
        n_actions=n_actions,
        transitions=rng.integers(n_states, size=(n_states, n_joint)),
        rewards=rng.normal(size=(n_states, n_joint)),
        features=rng.integers(n_features, size=(n_states, n_agents)),
        init=rng.dirichlet(np.ones(n_states)),
        gamma=gamma,
        horizon=horizon,
    )


def agent_policies(mdp, theta):
    """(S, M, A) action probabilities of every agent in every state."""
    logits = np.asarray(theta, dtype=np.float64)[mdp.features]
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


class _Tables:
    """Enumerated quantities shared by the gradient computations."""

    def __init__(self, mdp, theta, alpha=0.0):
        check_enumerable(mdp)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[1] != mdp.n_actions or theta.shape[0] < mdp.n_features:
            raise ContractError(f"theta must have shape (>= {mdp.n_features}, {mdp.n_actions})")
        self.mdp = mdp
        self.theta = theta
        self.joint = mdp.joint_actions()
        s, m = mdp.n_states, mdp.n_agents
        self.pol = agent_policies(mdp, theta)
        agents = np.arange(m)
        self.pj = self.pol[:, agents, self.joint].prod(axis=-1)  # (S, J)
        logpj = np.log(self.pol)[:, agents, self.joint].sum(axis=-1)

        h = mdp.horizon
        self.q = np.zeros((h, s, len(self.joint)))
        v = np.zeros(s)
        for t in reversed(range(h)):
            qt = mdp.rewards + mdp.gamma * v[mdp.transitions]
            # soft variant: the entropy bonus of the current step rides with Q
            self.q[t] = qt - alpha * logpj
            v = (self.pj * self.q[t]).sum(axis=1)
        self.v0 = v

        self.occupancy = np.zeros((h, s))
        d = mdp.init.copy()
        for t in range(h):
            self.occupancy[t] = d
            d = np.bincount(mdp.transitions.ravel(), weights=(d[:, None] * self.pj).ravel(), minlength=s)
        self.weights = (mdp.gamma ** np.arange(h))[:, None, None] * self.occupancy[:, :, None] * self.pj[None]

        a = mdp.n_actions
        # swap[i][j, b] is the joint index of j with agent i's action replaced by b
        place = a ** np.arange(m - 1, -1, -1)
        idx = self.joint @ place
        self.swap = [idx[:, None] + (np.arange(a)[None, :] - self.joint[:, i:i + 1]) * place[i] for i in range(m)]

    def objective(self):
        return float(self.mdp.init @ self.v0)

    def agent_gradient(self, i, coef):
        """sum over (t, s, j) of coef * grad log pi_i(a_i | s), coef shaped (H, S, J)."""
        mdp = self.mdp
        onehot = np.eye(mdp.n_actions)[self.joint[:, i]]
        by_action = coef.sum(axis=0) @ onehot  # (S, A)
        rows = by_action - by_action.sum(axis=1, keepdims=True) * self.pol[:, i, :]
        grad = np.zeros_like(self.theta)
        np.add.at(grad, mdp.features[:, i], rows)
        return grad

    def counterfactual_baseline(self, i):
        """(H, S, J) table of sum_b pi_i(b|s) Q(s, (b, a_-i))."""
        return (self.q[:, :, self.swap[i]] * self.pol[None, :, i, None, :]).sum(axis=-1)


def objective(mdp, theta, alpha=0.0):
    """Expected discounted return (plus alpha times the policy entropy when alpha > 0)."""
    return _Tables(mdp, theta, alpha).objective()


def exact_global_gradient(mdp, theta, alpha=0.0, per_agent=False):
    """Average over agents of E[grad log pi_i(a_i|s) Q(s, a)], exactly enumerated."""
    tb = _Tables(mdp, theta, alpha)
    grads = [tb.agent_gradient(i, tb.weights * tb.q) for i in range(mdp.n_agents)]
    return grads if per_agent else np.mean(grads, axis=0)


def exact_local_gradient(mdp, theta, alpha=0.0, baselines=None, per_agent=False):
    """Average over agents of E[grad log pi_i(a_i|s) (Q(s, a) - b_i(s, a_-i))].

    ``baselines`` optionally supplies one (H, S, J) table per agent; the
    default is the counterfactual baseline.
    """
    tb = _Tables(mdp, theta, alpha)
    grads = []
    for i in range(mdp.n_agents):
        b = tb.counterfactual_baseline(i) if baselines is None else baselines[i]
        grads.append(tb.agent_gradient(i, tb.weights * (tb.q - b)))
    return grads if per_agent else np.mean(grads, axis=0)


def tabulate_baseline(mdp, fn):
    """Evaluate ``fn(t, s, i, joint_action)`` into per-agent (H, S, J) tables."""
    check_enumerable(mdp)
    joint = mdp.joint_actions()
    out = []
    for i in range(mdp.n_agents):
        tab = np.empty((mdp.horizon, mdp.n_states, len(joint)))
        for t in range(mdp.horizon):
            for s in range(mdp.n_states):
                for j, a in enumerate(joint):
                    tab[t, s, j] = fn(t, s, i, tuple(int(x) for x in a))
        out.append(tab)
    return out


def _probe(mdp, tables, tol=0.0):
    """Raise if a baseline table changes when only the agent's own action changes."""
    check_enumerable(mdp)
    joint = mdp.joint_actions()
    a = mdp.n_actions
    place = a ** np.arange(mdp.n_agents - 1, -1, -1)
    idx = joint @ place
    for i, tab in enumerate(tables):
        tab = np.asarray(tab, dtype=np.float64)
        if tab.shape != (mdp.horizon, mdp.n_states, len(joint)):
            raise ContractError(f"baseline for agent {i} must have shape (horizon, states, joint actions)")
        swap = idx[:, None] + (np.arange(a)[None, :] - joint[:, i:i + 1]) * place[i]
        spread = np.ptp(tab[:, :, swap], axis=-1)
        if spread.max() > tol:
            raise ContractError(f"baseline for agent {i} depends on the agent's own action")


def baseline_invariance_check(mdp, theta, alternatives, alpha=0.0):
    """Max elementwise deviation of the local gradient under each alternative baseline.

    Each alternative is either a callable ``fn(t, s, i, joint_action)`` or a
    list of per-agent (H, S, J) tables. Inputs that vary with the agent's own
    action are rejected.
    """
    reference = exact_local_gradient(mdp, theta, alpha)
    worst = 0.0
    for alt in alternatives:
        tables = tabulate_baseline(mdp, alt) if callable(alt) else alt
        _probe(mdp, tables)
        g = exact_local_gradient(mdp, theta, alpha, baselines=tables)
        worst = max(worst, float(np.abs(g - reference).max()))
    return worst


def score_zero_mean(mdp, theta):
    """max |sum_a pi_i(a|s) grad log pi_i(a|s)| over agents and states."""
    pol = agent_policies(mdp, theta)
    eye = np.eye(mdp.n_actions)
    # per (s, i): sum_a pi(a) (e_a - pi) over the row of theta the agent reads
    per = (pol[..., :, None] * (eye[None, None] - pol[..., None, :])).sum(axis=-2)
    return float(np.abs(per).max())


def run_checks(n_mdps=50, seed=0):
    """Max deviations of every identity over random MDPs, as a JSON-ready dict."""
    rng = np.random.default_rng(seed)
    eq = ent = base = score = m1 = 0.0
    for k in range(n_mdps):
        m = 2 + k % 2
        mdp = random_tiny_mdp(rng, n_agents=m, n_states=int(rng.integers(2, 6)),
                              n_actions=int(rng.integers(2, 5 if m == 2 else 4)),
                              horizon=int(rng.integers(2, 7)), n_features=int(rng.integers(2, 6)))
        theta = rng.normal(size=(mdp.n_features, mdp.n_actions))
        eq = max(eq, float(np.abs(exact_global_gradient(mdp, theta) - exact_local_gradient(mdp, theta)).max()))
        ent = max(ent, float(np.abs(exact_global_gradient(mdp, theta, 0.1)
                                    - exact_local_gradient(mdp, theta, 0.1)).max()))
        table = rng.normal(size=(mdp.horizon, mdp.n_states, mdp.n_actions ** m))
        alts = [
            [np.zeros_like(table)] * m,
            lambda t, s, i, a, tab=table: tab[t, s, _zero_own(a, i, mdp.n_actions)],
        ]
        base = max(base, baseline_invariance_check(mdp, theta, alts))
        score = max(score, score_zero_mean(mdp, theta))
        single = random_tiny_mdp(rng, n_agents=1, n_states=3, n_actions=3, horizon=3)
        th1 = rng.normal(size=(single.n_features, 3))
        m1 = max(m1, float(np.abs(exact_global_gradient(single, th1) - exact_local_gradient(single, th1)).max()))
    return {
        "mdps": n_mdps,
        "seed": seed,
        "global_vs_local": eq,
        "global_vs_local_entropy": ent,
        "baseline_invariance": base,
        "score_zero_mean": score,
        "single_agent": m1,
    }


def _zero_own(action, i, n_actions):
    """Joint index of ``action`` with agent i's entry set to 0."""
    a = list(action)
    a[i] = 0
    idx = 0
    for x in a:
        idx = idx * n_actions + x
    return idx


def dump_checks(path, **kw):
    out = run_checks(**kw)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2)
    return out
