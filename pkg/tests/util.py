"""Shared builders for the test-suite."""
import numpy as np

from btdz.mdp import FeatureMap, TabularMdp


def random_mdp(n_states, n_actions, discount=0.9, seed=0, sparse=False):
    rng = np.random.default_rng(seed)
    P = rng.random((n_actions, n_states, n_states))
    if sparse:
        P *= rng.random(P.shape) < 0.4
        P[:, np.arange(n_states), rng.integers(0, n_states, n_states)] += 0.1
    P /= P.sum(axis=2, keepdims=True)
    mu = rng.random(n_states)
    return TabularMdp(P, mu / mu.sum(), discount)


def random_features(n_states, d, seed=0):
    return FeatureMap(np.random.default_rng(seed).standard_normal((n_states, d)))


def simulate_returns(mdp, policy, reward, n_rollouts, horizon, seed=0):
    """Monte Carlo discounted returns of a deterministic policy (vectorised)."""
    rng = np.random.default_rng(seed)
    s = rng.choice(mdp.n_states, size=n_rollouts, p=mdp.initial_dist)
    total = np.zeros(n_rollouts)
    cum = np.cumsum(mdp.transitions, axis=2)
    for t in range(horizon):
        total += mdp.discount ** t * reward[s]
        u = rng.random(n_rollouts)
        rows = cum[policy[s], s]
        s = np.minimum((rows < u[:, None]).sum(axis=1), mdp.n_states - 1)
    return total


def swap_mdp(discount=0.9):
    P = np.zeros((2, 2, 2))
    P[:, 0, 1] = 1.0
    P[:, 1, 0] = 1.0
    return TabularMdp(P, np.array([1.0, 0.0]), discount)


def single_state_mdp(discount=0.5, n_actions=1):
    return TabularMdp(np.ones((n_actions, 1, 1)), np.ones(1), discount)
