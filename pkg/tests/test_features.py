import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from btdz.engine import RewardProbe, infer_task_vector
from btdz.errors import DegenerateFeaturesError, InvalidArgumentError
from btdz.features import (FAMILIES, build_features, feature_gram, fix_signs, low_rank_factors,
                           lra_p_features, lra_sr_features, onehot_features, random_orthonormal_features,
                           successor_measure, uniform_behavior, whiten_features,
                           WHITEN_RIDGE)
from btdz.mdp import FeatureMap, TabularMdp, stochastic_transition_matrix
from util import random_mdp


def chain(n, gamma=0.9, p=0.8):
    """Lazy random walk on a path; one action."""
    P = np.zeros((1, n, n))
    for s in range(n):
        P[0, s, min(s + 1, n - 1)] += p / 2
        P[0, s, max(s - 1, 0)] += p / 2
        P[0, s, s] += 1 - p
    return TabularMdp(P, np.full(n, 1.0 / n), gamma)


# ------------------------------------------------------------ onehot

def test_onehot_identity():
    fm = onehot_features(random_mdp(3, 2))
    assert np.array_equal(fm.phi, np.eye(3))
    assert np.allclose(np.linalg.norm(fm.phi, axis=1), 1.0)


def test_onehot_inference_recovers_reward(rng):
    n = 6
    fm = onehot_features(random_mdp(n, 2))
    r = rng.standard_normal(n)
    z, _ = infer_task_vector(RewardProbe(np.arange(n), r), fm, ridge=0.0)
    assert np.allclose(z, r, atol=1e-12)
    # whitened under uniform rho the identity is scaled by sqrt(n)
    w = whiten_features(fm, np.full(n, 1.0 / n))
    zw, _ = infer_task_vector(RewardProbe(np.arange(n), r), w, ridge=0.0)
    assert np.allclose(w.phi @ zw, r, atol=1e-6)


# ------------------------------------------------------------ LRA_P

def test_lra_p_exact_reconstruction_low_rank(rng):
    n, r = 8, 3
    A = rng.random((n, r)) @ rng.random((r, n))
    P_hat = A / A.sum(axis=1, keepdims=True)
    left, right, _, rank = low_rank_factors(P_hat, r)
    assert rank == r
    assert np.linalg.norm(P_hat - left @ right.T) <= 1e-8
    assert np.allclose(lra_p_features(P_hat, r).phi, right)


def test_lra_p_doubly_stochastic_leading_direction(rng):
    n = 6
    perms = [np.eye(n)[rng.permutation(n)] for _ in range(4)]
    P_hat = sum(w * p for w, p in zip([0.4, 0.3, 0.2, 0.1], perms))
    phi = lra_p_features(P_hat, 1).phi[:, 0]
    u = phi / np.linalg.norm(phi)
    assert np.allclose(u, np.full(n, 1 / np.sqrt(n)), atol=1e-8)


def test_lra_p_truncation_error(rng):
    P_hat = rng.random((7, 7))
    P_hat /= P_hat.sum(axis=1, keepdims=True)
    for d in range(1, 7):
        left, right, s, _ = low_rank_factors(P_hat, d)
        err = np.linalg.norm(P_hat - left @ right.T) ** 2
        assert err == pytest.approx(np.sum(s[d:] ** 2), abs=1e-10)


def test_lra_p_rejects_large_d():
    with pytest.raises(InvalidArgumentError):
        lra_p_features(np.eye(3), 4)


# ------------------------------------------------------------ LRA_SR

def test_lra_sr_zero_discount_is_axis_subset():
    mdp = random_mdp(5, 2, 0.0)
    fm = lra_sr_features(mdp, uniform_behavior(mdp), 3, whiten=False)
    # M = I: every column is a nonnegative canonical axis
    assert np.allclose(np.sort(np.abs(fm.phi), axis=0)[:-1], 0.0)
    assert np.allclose(fm.phi.max(axis=0), 1.0)


def test_lra_sr_full_rank_reconstruction():
    mdp = random_mdp(5, 2, 0.9, seed=1)
    M = successor_measure(mdp, uniform_behavior(mdp))
    left, right, _, _ = low_rank_factors(M, 5)
    assert np.linalg.norm(M - left @ right.T) <= 1e-8


def test_lra_sr_rank2_error_matches_eigensolver():
    mdp = chain(5)
    M = successor_measure(mdp, uniform_behavior(mdp))
    left, right, _, _ = low_rank_factors(M, 2)
    # independent oracle: eigenvalues of M^T M
    ev = np.sort(np.linalg.eigvalsh(M.T @ M))[::-1]
    assert np.linalg.norm(M - left @ right.T) ** 2 == pytest.approx(ev[2:].sum(), rel=1e-9)


def test_lra_error_non_increasing_in_d():
    mdp = random_mdp(8, 3, 0.9, seed=2)
    M = successor_measure(mdp, uniform_behavior(mdp))
    errs = []
    for d in range(1, 9):
        left, right, _, _ = low_rank_factors(M, d)
        errs.append(np.linalg.norm(M - left @ right.T))
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_padding_past_rank_is_orthogonal():
    n = 8
    P_hat = np.full((n, n), 1.0 / n)  # rank 1
    left, right, _, rank = low_rank_factors(P_hat, 4, seed=3)
    assert rank == 1
    pad = right[:, 1:]
    assert np.allclose(pad.T @ pad, np.eye(3), atol=1e-12)
    assert np.allclose(right[:, :1].T @ pad, 0.0, atol=1e-12)
    assert np.linalg.norm(P_hat - left @ right.T) <= 1e-12


def test_sign_convention():
    cols = np.array([[0.0, -1.0], [-2.0, 1.0], [1.0, 0.0]])
    fixed = fix_signs(cols)
    assert fixed[1, 0] > 0 and fixed[0, 1] > 0


def test_spectral_features_deterministic():
    mdp = random_mdp(6, 2, 0.9, seed=4)
    a = build_features("lra_sr", mdp, 4, seed=0)
    b = build_features("lra_sr", mdp, 4, seed=0)
    assert np.array_equal(a.phi, b.phi)


# ------------------------------------------------------------ random

def test_random_orthonormal():
    fm = random_orthonormal_features(10, 4, seed=0)
    assert np.allclose(fm.phi.T @ fm.phi, np.eye(4), atol=1e-10)
    assert np.array_equal(fm.phi, random_orthonormal_features(10, 4, seed=0).phi)


def test_random_orthonormal_seed_collisions():
    mats = [random_orthonormal_features(8, 3, seed=s).phi for s in range(101)]
    for i in range(100):
        assert np.linalg.norm(mats[i] - mats[i + 1]) > 0


def test_random_rejects_large_d():
    with pytest.raises(InvalidArgumentError):
        random_orthonormal_features(3, 4, 0)


# ------------------------------------------------------------ whitening

def test_whiten_idempotent(rng):
    rho = np.full(9, 1 / 9)
    once = whiten_features(FeatureMap(rng.standard_normal((9, 4))), rho)
    twice = whiten_features(once, rho)
    assert np.allclose(once.phi, twice.phi, atol=1e-6)


def test_whiten_scale_invariant(rng):
    rho = rng.random(9)
    rho /= rho.sum()
    phi = rng.standard_normal((9, 4))
    a = whiten_features(FeatureMap(phi), rho)
    b = whiten_features(FeatureMap(10 * phi), rho)
    assert np.allclose(a.phi, b.phi, atol=1e-6)


def test_whiten_gram_is_identity(rng):
    rho = np.full(12, 1 / 12)
    fm = whiten_features(FeatureMap(rng.standard_normal((12, 5))), rho)
    assert np.max(np.abs(feature_gram(fm, rho) - np.eye(5))) <= 1e-6


def test_whiten_degenerate_reports_rank(rng):
    base = rng.standard_normal((6, 2))
    phi = np.hstack([base, base[:, :1] * 2.0])
    with pytest.raises(DegenerateFeaturesError) as err:
        whiten_features(FeatureMap(phi), np.full(6, 1 / 6))
    assert err.value.rank == 2


def test_whiten_rejects_bad_rho():
    with pytest.raises(InvalidArgumentError):
        whiten_features(FeatureMap(np.eye(3)), np.array([0.5, 0.5, 0.5]))


@settings(max_examples=25, deadline=None)
@given(family=st.sampled_from(FAMILIES), seed=st.integers(0, 1000), d=st.integers(1, 7))
def test_every_family_whitened(family, seed, d):
    mdp = random_mdp(7, 2, 0.9, seed=seed)
    if family == "onehot":
        d = 7
    P_hat = stochastic_transition_matrix(mdp, uniform_behavior(mdp))
    raw = build_features(family, mdp, d, seed, P_hat=P_hat, whiten=False)
    fm = build_features(family, mdp, d, seed, P_hat=P_hat)
    rho = np.full(7, 1 / 7)
    # the ridge shrinks each eigen-direction to lam / (lam + ridge)
    lam = np.linalg.eigvalsh(feature_gram(raw, rho))
    got = np.linalg.eigvalsh(feature_gram(fm, rho))
    assert np.allclose(got, lam / (lam + WHITEN_RIDGE), atol=1e-9)
    if lam.min() > 1e-2:
        assert np.max(np.abs(feature_gram(fm, rho) - np.eye(d))) <= 1e-6


def test_build_features_errors():
    mdp = random_mdp(4, 2)
    with pytest.raises(InvalidArgumentError):
        build_features("onehot", mdp, 3)
    with pytest.raises(InvalidArgumentError):
        build_features("nope", mdp, 2)
    with pytest.raises(InvalidArgumentError):
        build_features("random", mdp, 5)
