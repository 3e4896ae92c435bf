import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sacha import analysis as an
from sacha.errors import ContractError


def trajectory_gradient(mdp, theta):
    """grad J by summing over every trajectory: E[sum_t score_t * reward-to-go]."""
    pol = an.agent_policies(mdp, theta)
    joint = list(itertools.product(range(mdp.n_actions), repeat=mdp.n_agents))
    grad = np.zeros_like(theta)
    total = 0.0
    for s0 in range(mdp.n_states):
        for seq in itertools.product(range(len(joint)), repeat=mdp.horizon):
            p, s, rewards, scores = mdp.init[s0], s0, [], []
            for t, j in enumerate(seq):
                a = joint[j]
                score = np.zeros_like(theta)
                for i in range(mdp.n_agents):
                    p *= pol[s, i, a[i]]
                    score[mdp.features[s, i]] += np.eye(mdp.n_actions)[a[i]] - pol[s, i]
                scores.append(score)
                rewards.append(mdp.gamma ** t * mdp.rewards[s, j])
                s = mdp.transitions[s, j]
            if p == 0:
                continue
            total += p * sum(rewards)
            for t in range(mdp.horizon):
                grad += p * scores[t] * sum(rewards[t:])
    return total, grad


@pytest.mark.parametrize("m", [1, 2])
def test_matches_trajectory_enumeration(m, rng):
    mdp = an.random_tiny_mdp(rng, n_agents=m, n_states=3, n_actions=2, horizon=3, n_features=3)
    theta = rng.normal(size=(3, 2))
    j, g = trajectory_gradient(mdp, theta)
    assert an.objective(mdp, theta) == pytest.approx(j, abs=1e-12)
    assert np.allclose(an.exact_global_gradient(mdp, theta), g / m, atol=1e-12)


def test_objective_finite_differences(rng):
    mdp = an.random_tiny_mdp(rng, n_agents=3, n_states=4, n_actions=2, horizon=4)
    theta = rng.normal(size=(mdp.n_features, 2))
    for alpha in (0.0, 0.2):
        fd = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            e = np.zeros_like(theta)
            e[idx] = 1e-6
            fd[idx] = (an.objective(mdp, theta + e, alpha) - an.objective(mdp, theta - e, alpha)) / 2e-6
        assert np.allclose(an.exact_global_gradient(mdp, theta, alpha) * 3, fd, atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.sampled_from([2, 3]))
def test_global_equals_local(seed, m):
    rng = np.random.default_rng(seed)
    mdp = an.random_tiny_mdp(rng, n_agents=m, n_states=int(rng.integers(2, 6)), n_actions=3 if m == 2 else 2,
                             horizon=int(rng.integers(1, 7)), n_features=4)
    theta = rng.normal(size=(4, mdp.n_actions)) * 2
    assert np.abs(an.exact_global_gradient(mdp, theta) - an.exact_local_gradient(mdp, theta)).max() < 1e-8
    g = an.exact_global_gradient(mdp, theta, 0.3, per_agent=True)
    loc = an.exact_local_gradient(mdp, theta, 0.3, per_agent=True)
    assert max(np.abs(a - b).max() for a, b in zip(g, loc)) < 1e-8


def test_single_state_single_action():
    mdp = an.TinyMdp(1, 1, [[0]], [[2.0]], [[0]], [1.0], horizon=3)
    assert not an.exact_global_gradient(mdp, np.zeros((1, 1))).any()


def test_uniform_rewards_give_zero(rng):
    mdp = an.random_tiny_mdp(rng, n_agents=2)
    mdp.rewards[:] = 1.5
    theta = rng.normal(size=(mdp.n_features, 3))
    assert np.abs(an.exact_global_gradient(mdp, theta)).max() < 1e-12
    assert np.abs(an.exact_local_gradient(mdp, theta)).max() < 1e-12


def test_single_agent_reduction(rng):
    mdp = an.random_tiny_mdp(rng, n_agents=1, n_states=4, n_actions=4, horizon=5)
    theta = rng.normal(size=(mdp.n_features, 4))
    assert np.abs(an.exact_global_gradient(mdp, theta) - an.exact_local_gradient(mdp, theta)).max() < 1e-13


class TestBaselines:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.mdp = an.random_tiny_mdp(rng, n_agents=2, n_states=4)
        self.theta = rng.normal(size=(self.mdp.n_features, 3))
        self.rng = rng

    def test_zero_and_random_baselines(self):
        table = self.rng.normal(size=(4, 4, 9))
        alts = [
            lambda t, s, i, a: 0.0,
            lambda t, s, i, a: table[t, s, an._zero_own(a, i, 3)],
        ]
        assert an.baseline_invariance_check(self.mdp, self.theta, alts) < 1e-10

    def test_own_action_dependence_rejected(self):
        tb = an._Tables(self.mdp, self.theta)
        with pytest.raises(ContractError, match="own action"):
            an.baseline_invariance_check(self.mdp, self.theta, [[tb.q, tb.q]])

    def test_wrong_shape_rejected(self):
        with pytest.raises(ContractError):
            an.baseline_invariance_check(self.mdp, self.theta, [[np.zeros((1, 1, 1))] * 2])


def test_score_zero_mean(rng):
    mdp = an.random_tiny_mdp(rng, n_agents=3, n_actions=4, n_states=5)
    assert an.score_zero_mean(mdp, rng.normal(size=(mdp.n_features, 4)) * 3) < 1e-12


@pytest.mark.parametrize("kw", [dict(n_agents=4, n_actions=2), dict(n_actions=6), dict(horizon=7),
                                dict(n_states=51)])
def test_not_enumerable(kw, rng):
    mdp = an.random_tiny_mdp(rng, **kw)
    with pytest.raises(ContractError):
        an.exact_global_gradient(mdp, np.zeros((mdp.n_features, mdp.n_actions)))


def test_run_checks_keys():
    out = an.run_checks(n_mdps=4, seed=1)
    for key in ("global_vs_local", "global_vs_local_entropy", "baseline_invariance", "score_zero_mean", "single_agent"):
        assert out[key] < 1e-10
